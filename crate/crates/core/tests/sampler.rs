//! End-to-end properties of the corrected sampler.

use jointfuse_core::denoiser::{Denoiser, OracleDenoiser, TinyDenoiser, TinyNetParams};
use jointfuse_core::joint::JointState;
use jointfuse_core::ops::{LinearDegradation, OpSpec};
use jointfuse_core::sampler::{run_fusion, FusionConfig};
use jointfuse_core::{Dims, ImagePlane, SeededRng};

fn plane(d: Dims, rng: &mut SeededRng) -> ImagePlane {
    ImagePlane::from_fn(d, |_, _| rng.uniform())
}

fn op(spec: &str, d: Dims) -> LinearDegradation {
    spec.parse::<OpSpec>().unwrap().build(d).unwrap()
}

#[test]
fn corrected_states_obey_the_fusion_rule() {
    let d = Dims::new(12, 12);
    let mut rng = SeededRng::new(4);
    let (x1, x2) = (plane(d, &mut rng), plane(d, &mut rng));
    let (a1, a2) = (op("blur:sigma=0.6,gamma=0,size=3", d), op("down:s=2", d));
    let (y1, y2) = (a1.apply(&x1).unwrap(), a2.apply(&x2).unwrap());
    let den = TinyDenoiser::new(TinyNetParams::init(2));
    let cfg = FusionConfig {
        steps: 4,
        keep_trace: true,
        ..Default::default()
    };
    let out = run_fusion(&y1, &y2, &a1, &a2, &den, &cfg).unwrap();
    assert_eq!(out.trace.len(), 4);
    for rec in &out.trace {
        let blend = rec
            .w1
            .zip_map(&rec.corrected.x1, |w, a| w * a)
            .add(&rec.w1.map(|w| 1.0 - w).mul(&rec.corrected.x2));
        assert!(
            rec.corrected.xf.max_abs_diff(&blend) <= 1e-10,
            "step {}",
            rec.t
        );
        assert!(a1.apply(&rec.corrected.x1).unwrap().max_abs_diff(&y1) <= 1e-8);
        assert!(a2.apply(&rec.corrected.x2).unwrap().max_abs_diff(&y2) <= 1e-8);
    }
    assert!(out.fused.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn oracle_error_shrinks_over_the_last_two_steps() {
    let d = Dims::new(16, 16);
    let mut rng = SeededRng::new(9);
    let (x1, x2) = (plane(d, &mut rng), plane(d, &mut rng));
    let (a1, a2) = (op("blur:sigma=0.5,gamma=0,size=3", d), op("id", d));
    let (y1, y2) = (a1.apply(&x1).unwrap(), a2.apply(&x2).unwrap());
    let xf = x1.zip_map(&x2, |a, b| 0.5 * (a + b));
    let clean = JointState::new(x1.clone(), x2.clone(), xf).unwrap();
    let den = OracleDenoiser::new(clean.clone(), 0.5).unwrap();
    let cfg = FusionConfig {
        keep_trace: true,
        ..Default::default()
    };
    let out = run_fusion(&y1, &y2, &a1, &a2, &den, &cfg).unwrap();
    let err = |s: &JointState| s.x1.max_abs_diff(&x1).max(s.x2.max_abs_diff(&x2));
    let errors: Vec<f64> = out.trace.iter().map(|r| err(&r.next)).collect();
    let n = errors.len();
    assert!(errors[n - 1] < errors[n - 2], "{errors:?}");
    assert!(errors[n - 1] <= 1e-9);
}

#[test]
fn normalized_variant_also_recovers_the_oracle_blend() {
    let d = Dims::new(8, 8);
    let mut rng = SeededRng::new(1);
    let (x1, x2) = (plane(d, &mut rng), plane(d, &mut rng));
    let id = op("id", d);
    let clean = JointState::new(x1.clone(), x2.clone(), x1.clone()).unwrap();
    let den = OracleDenoiser::new(clean, 0.75).unwrap().normalized(true);
    let cfg = FusionConfig {
        ddim_normalize: true,
        ..Default::default()
    };
    let out = run_fusion(&x1, &x2, &id, &id, &den, &cfg).unwrap();
    let expect = x1.zip_map(&x2, |a, b| 0.75 * a + 0.25 * b);
    assert!(out.fused.max_abs_diff(&expect) <= 1e-6);
}

#[test]
fn denoisers_are_object_safe() {
    let d = Dims::new(6, 6);
    let id = op("id", d);
    let y = ImagePlane::filled(d, 0.5);
    let dens: Vec<Box<dyn Denoiser>> = vec![
        Box::new(TinyDenoiser::new(TinyNetParams::zeros())),
        Box::new(OracleDenoiser::new(JointState::zeros(d), 0.5).unwrap()),
    ];
    for den in &dens {
        let out = run_fusion(&y, &y, &id, &id, den.as_ref(), &FusionConfig::default()).unwrap();
        assert!(out.fused.is_finite());
    }
}

#[test]
fn mismatched_operators_are_rejected() {
    let y = ImagePlane::zeros(Dims::new(4, 4));
    let a1 = op("id", Dims::new(4, 4));
    let a2 = op("id", Dims::new(8, 8));
    let den = TinyDenoiser::new(TinyNetParams::zeros());
    assert!(run_fusion(&y, &y, &a1, &a2, &den, &FusionConfig::default()).is_err());
}
