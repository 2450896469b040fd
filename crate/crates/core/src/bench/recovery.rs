use serde::{Deserialize, Serialize};

use super::scene::SyntheticScene;
use super::shapes::PrimitiveSpec;
use crate::geometry::{apply_transform, chamfer_distance, LayoutParams, PointCloud};

/// Per-instance success thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Translation error as a percentage of the scene bounding-box diagonal.
    pub translation_pct: f64,
    pub rotation_deg: f64,
    /// Relative scale error `|s - s*| / s*`.
    pub scale_rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { translation_pct: 2.0, rotation_deg: 5.0, scale_rel: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecovery {
    pub index: usize,
    pub label: String,
    /// Rotation is not scored for continuously symmetric shapes.
    pub symmetric: bool,
    pub translation_error: Option<f64>,
    pub translation_pct: Option<f64>,
    pub rotation_error_deg: Option<f64>,
    pub scale_rel_error: Option<f64>,
    /// Chamfer distance between the canonical sample placed by the
    /// recovered and by the true layout.
    pub final_cd: Option<f64>,
    pub success: bool,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub scene_diagonal: f64,
    pub tolerances: Tolerances,
    pub instances: Vec<InstanceRecovery>,
    pub evaluated: usize,
    pub succeeded: usize,
    pub success_rate: f64,
    /// Same counts restricted to instances whose rotation is scored.
    pub asymmetric_evaluated: usize,
    pub asymmetric_succeeded: usize,
    pub asymmetric_success_rate: f64,
}

/// Ground truth for one instance: primitive, canonical sample, and whether
/// any of it is visible.
#[derive(Debug, Clone, Copy)]
pub struct TruthRef<'a> {
    pub spec: &'a PrimitiveSpec,
    pub canonical: &'a PointCloud<f64>,
    pub observed: bool,
}

fn rate(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Scores recovered layouts against ground truth. Unobserved instances are
/// skipped; observed ones without a layout fail with reason `missing`.
pub fn evaluate_recovery_with(
    truth: &[TruthRef<'_>],
    recovered: &[Option<LayoutParams<f64>>],
    scene_diagonal: f64,
    tol: &Tolerances,
) -> RecoveryReport {
    let mut instances = Vec::new();
    for (index, t) in truth.iter().enumerate() {
        if !t.observed {
            continue;
        }
        let symmetric = t.spec.shape.rotational_symmetries().is_none();
        let Some(est) = recovered.get(index).copied().flatten() else {
            instances.push(InstanceRecovery {
                index,
                label: t.spec.label.clone(),
                symmetric,
                translation_error: None,
                translation_pct: None,
                rotation_error_deg: None,
                scale_rel_error: None,
                final_cd: None,
                success: false,
                reason: Some("missing".into()),
            });
            continue;
        };
        let gt = &t.spec.pose;
        let translation_error = (0..3).map(|k| (est.translation[k] - gt.translation[k]).powi(2)).sum::<f64>().sqrt();
        let translation_pct = 100.0 * translation_error / scene_diagonal;
        let rotation_error_deg = t.spec.rotation_error(&est.rotation).map(f64::to_degrees);
        let scale_rel_error = (est.scale - gt.scale).abs() / gt.scale;
        let final_cd = match (apply_transform(t.canonical, &est), apply_transform(t.canonical, gt)) {
            (Ok(a), Ok(b)) => chamfer_distance(&a, &b).ok(),
            _ => None,
        };
        let mut failed = Vec::new();
        if !(translation_pct <= tol.translation_pct) {
            failed.push("translation");
        }
        if rotation_error_deg.is_some_and(|r| !(r <= tol.rotation_deg)) {
            failed.push("rotation");
        }
        if !(scale_rel_error <= tol.scale_rel) {
            failed.push("scale");
        }
        instances.push(InstanceRecovery {
            index,
            label: t.spec.label.clone(),
            symmetric,
            translation_error: Some(translation_error),
            translation_pct: Some(translation_pct),
            rotation_error_deg,
            scale_rel_error: Some(scale_rel_error),
            final_cd,
            success: failed.is_empty(),
            reason: (!failed.is_empty()).then(|| failed.join(",")),
        });
    }
    let evaluated = instances.len();
    let succeeded = instances.iter().filter(|i| i.success).count();
    let asym: Vec<_> = instances.iter().filter(|i| !i.symmetric).collect();
    let asymmetric_succeeded = asym.iter().filter(|i| i.success).count();
    RecoveryReport {
        scene_diagonal,
        tolerances: *tol,
        evaluated,
        succeeded,
        success_rate: rate(succeeded, evaluated),
        asymmetric_evaluated: asym.len(),
        asymmetric_succeeded,
        asymmetric_success_rate: rate(asymmetric_succeeded, asym.len()),
        instances,
    }
}

/// `recovered[i]` is the layout for `scene.primitives[i]`.
pub fn evaluate_recovery(scene: &SyntheticScene, recovered: &[Option<LayoutParams<f64>>], tol: &Tolerances) -> RecoveryReport {
    let truth: Vec<_> = scene
        .primitives
        .iter()
        .zip(&scene.canonical_clouds)
        .zip(&scene.masks)
        .map(|((spec, canonical), mask)| TruthRef { spec, canonical, observed: mask.count() > 0 })
        .collect();
    evaluate_recovery_with(&truth, recovered, scene.scene_diagonal(), tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::scene::raycast_scene;
    use crate::bench::shapes::Shape;
    use crate::camera::PinholeIntrinsics;
    use crate::geometry::EulerRotation;

    fn scene() -> SyntheticScene {
        let cam = PinholeIntrinsics::centered(200.0, 96, 72).unwrap();
        let prims = vec![
            PrimitiveSpec::new(Shape::Sphere, 0.3, LayoutParams::new([-0.4, 0.0, 3.0], EulerRotation::identity(), 1.0).unwrap(), 64),
            PrimitiveSpec::new(
                Shape::Box { extents: [1.0, 0.6, 0.4] },
                0.3,
                LayoutParams::new([0.0, 0.1, 3.2], EulerRotation::new(0.2, 0.4, -0.3), 1.1).unwrap(),
                64,
            ),
            PrimitiveSpec::new(
                Shape::LBracket { long_leg: 1.0, short_leg: 0.6, thickness: 0.25, depth: 0.4 },
                0.3,
                LayoutParams::new([0.4, -0.1, 2.8], EulerRotation::new(-0.5, 1.0, 2.0), 0.9).unwrap(),
                64,
            ),
        ];
        raycast_scene(&prims, &cam, 3).unwrap()
    }

    #[test]
    fn truth_scores_perfectly() {
        let s = scene();
        let rec: Vec<_> = s.primitives.iter().map(|p| Some(p.pose)).collect();
        let r = evaluate_recovery(&s, &rec, &Tolerances::default());
        assert_eq!(r.success_rate, 1.0);
        assert_eq!(r.asymmetric_evaluated, 2);
        for i in &r.instances {
            assert_eq!(i.translation_error, Some(0.0));
            assert_eq!(i.scale_rel_error, Some(0.0));
            assert_eq!(i.final_cd, Some(0.0));
            assert!(i.rotation_error_deg.is_none_or(|r| r < 1e-6));
        }
        assert!(r.instances[0].symmetric && r.instances[0].rotation_error_deg.is_none());
    }

    #[test]
    fn one_percent_offset_passes_two_percent_tolerance() {
        let s = scene();
        let diag = s.scene_diagonal();
        let mut rec: Vec<_> = s.primitives.iter().map(|p| Some(p.pose)).collect();
        rec[1].as_mut().unwrap().translation[0] += 0.01 * diag;
        let r = evaluate_recovery(&s, &rec, &Tolerances::default());
        assert!((r.instances[1].translation_pct.unwrap() - 1.0).abs() < 1e-9);
        assert!(r.instances[1].success);
    }

    #[test]
    fn perturbations_match_hand_computation() {
        let s = scene();
        let diag = s.scene_diagonal();
        let mut rec: Vec<_> = s.primitives.iter().map(|p| Some(p.pose)).collect();
        // sphere: scale off by 5%, any rotation ignored
        {
            let p = rec[0].as_mut().unwrap();
            p.scale *= 1.05;
            p.rotation = EulerRotation::new(1.0, 2.0, 3.0);
        }
        // box: translation off by (0.03, 0.04, 0)
        {
            let p = rec[1].as_mut().unwrap();
            p.translation[0] += 0.03;
            p.translation[1] += 0.04;
        }
        // l-bracket: rz shifted by 3 degrees
        let mut lb = s.primitives[2].pose;
        lb.rotation.rz += 3f64.to_radians();
        rec[2] = Some(lb);

        let r = evaluate_recovery(&s, &rec, &Tolerances::default());
        let i0 = &r.instances[0];
        assert!((i0.scale_rel_error.unwrap() - 0.05).abs() < 1e-12);
        assert_eq!(i0.reason.as_deref(), Some("scale"));

        let i1 = &r.instances[1];
        assert!((i1.translation_error.unwrap() - 0.05).abs() < 1e-12);
        assert!((i1.translation_pct.unwrap() - 5.0 / diag).abs() < 1e-9);
        assert_eq!(i1.success, 5.0 / diag <= 2.0);

        // rz is the outermost factor, so the relative rotation is exactly 3 degrees
        let i2 = &r.instances[2];
        assert!((i2.rotation_error_deg.unwrap() - 3.0).abs() < 1e-9);
        assert!(i2.success);
    }

    #[test]
    fn missing_instances_fail() {
        let s = scene();
        let r = evaluate_recovery(&s, &[Some(s.primitives[0].pose)], &Tolerances::default());
        assert_eq!(r.evaluated, 3);
        assert_eq!(r.succeeded, 1);
        assert_eq!(r.instances[2].reason.as_deref(), Some("missing"));
    }

    #[test]
    fn flipped_box_is_not_an_error() {
        let s = scene();
        // Rz(pi) composed on the right of an Rz*Ry*Rx rotation with rx = ry = 0
        // is just rz + pi.
        let mut p = LayoutParams::new([0.0, 0.0, 3.0], EulerRotation::new(0.0, 0.0, 0.7), 1.0).unwrap();
        let mut spec = s.primitives[1].clone();
        spec.pose = p;
        p.rotation.rz += std::f64::consts::PI;
        let canonical = s.canonical_clouds[1].clone();
        let truth = [TruthRef { spec: &spec, canonical: &canonical, observed: true }];
        let r = evaluate_recovery_with(&truth, &[Some(p)], 1.0, &Tolerances::default());
        assert!(r.instances[0].rotation_error_deg.unwrap() < 1e-6);
    }
}
