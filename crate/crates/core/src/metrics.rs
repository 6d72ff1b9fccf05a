//! Pose accuracy metrics and recall aggregation.
//!
//! Conventions: ADD, ADD-S and reprojection accept strictly below their
//! threshold; 5cm/5° accepts at or below both thresholds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::geometry::{rotation_angle_between, Pose};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// Fraction of the object diameter for ADD and ADD-S.
    pub add_fraction: f64,
    pub reproj_px: f64,
    pub rotation_deg: f64,
    pub translation_m: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            add_fraction: 0.1,
            reproj_px: 5.0,
            rotation_deg: 5.0,
            translation_m: 0.05,
        }
    }
}

fn check_points(points: &[Vector3<f64>]) -> Result<()> {
    if points.is_empty() {
        Err(Error::invalid("metrics need at least one model point"))
    } else {
        Ok(())
    }
}

/// Mean distance between corresponding transformed points.
pub fn add_value(est: &Pose, gt: &Pose, points: &[Vector3<f64>]) -> Result<f64> {
    check_points(points)?;
    let sum: f64 = points
        .iter()
        .map(|p| (est.transform(p) - gt.transform(p)).norm())
        .sum();
    Ok(sum / points.len() as f64)
}

/// Mean distance from each estimated point to the closest ground-truth point.
pub fn adds_value(est: &Pose, gt: &Pose, points: &[Vector3<f64>]) -> Result<f64> {
    check_points(points)?;
    let target: Vec<Vector3<f64>> = points.iter().map(|p| gt.transform(p)).collect();
    let sum: f64 = points
        .iter()
        .map(|p| {
            let q = est.transform(p);
            target
                .iter()
                .map(|t| (q - t).norm_squared())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum();
    Ok(sum / points.len() as f64)
}

/// Mean base-image distance between the projections under both poses.
pub fn reproj_value(
    est: &Pose,
    gt: &Pose,
    points: &[Vector3<f64>],
    intr: &CameraIntrinsics,
) -> Result<f64> {
    check_points(points)?;
    let mut sum = 0.0;
    for p in points {
        let a = intr.project(&est.transform(p))?;
        let b = intr.project(&gt.transform(p))?;
        sum += (a - b).norm();
    }
    Ok(sum / points.len() as f64)
}

pub fn add_metric(est: &Pose, gt: &Pose, points: &[Vector3<f64>], diameter: f64) -> Result<(f64, bool)> {
    let v = add_value(est, gt, points)?;
    Ok((v, v < 0.1 * diameter))
}

pub fn adds_metric(est: &Pose, gt: &Pose, points: &[Vector3<f64>], diameter: f64) -> Result<(f64, bool)> {
    let v = adds_value(est, gt, points)?;
    Ok((v, v < 0.1 * diameter))
}

pub fn reproj_metric(
    est: &Pose,
    gt: &Pose,
    points: &[Vector3<f64>],
    intr: &CameraIntrinsics,
    threshold_px: f64,
) -> Result<(f64, bool)> {
    let v = reproj_value(est, gt, points, intr)?;
    Ok((v, v < threshold_px))
}

/// Returns (rotation error in degrees, translation error in meters, accepted).
pub fn deg_cm_metric(est: &Pose, gt: &Pose, deg_threshold: f64, cm_threshold: f64) -> (f64, f64, bool) {
    let r = rotation_angle_between(est, gt);
    let t = (est.translation - gt.translation).norm();
    (r, t, r <= deg_threshold && t <= cm_threshold / 100.0)
}

/// Object-frame rotations under which the object looks the same. Always
/// contains the identity, first.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetrySet {
    rotations: Vec<Matrix3<f64>>,
}

impl SymmetrySet {
    pub fn identity() -> Self {
        SymmetrySet {
            rotations: vec![Matrix3::identity()],
        }
    }

    /// Prepends the identity unless already present.
    pub fn new(rotations: &[Matrix3<f64>]) -> Self {
        let mut out = vec![Matrix3::identity()];
        for r in rotations {
            if (r - Matrix3::identity()).amax() > 1e-12 {
                out.push(*r);
            }
        }
        SymmetrySet { rotations: out }
    }

    pub fn rotations(&self) -> &[Matrix3<f64>] {
        &self.rotations
    }

    pub fn is_trivial(&self) -> bool {
        self.rotations.len() == 1
    }

    /// Ground-truth poses equivalent under the set.
    pub fn equivalents<'a>(&'a self, gt: &'a Pose) -> impl Iterator<Item = Pose> + 'a {
        self.rotations.iter().map(move |s| gt.with_object_rotation(s))
    }
}

/// Minimum of `metric` over the symmetric equivalents of `gt`.
pub fn symmetric_metric<F>(set: &SymmetrySet, gt: &Pose, mut metric: F) -> Result<f64>
where
    F: FnMut(&Pose) -> Result<f64>,
{
    let mut best = f64::INFINITY;
    for g in set.equivalents(gt) {
        best = best.min(metric(&g)?);
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricKind {
    #[serde(rename = "add")]
    Add,
    #[serde(rename = "adds")]
    AddS,
    /// ADD-S for objects with declared symmetries, ADD otherwise.
    #[serde(rename = "add(-s)")]
    AddOrAddS,
    #[serde(rename = "reproj")]
    Reproj,
    #[serde(rename = "reproj-s")]
    ReprojS,
    #[serde(rename = "5cm5deg")]
    DegCm,
    #[serde(rename = "5cm5deg-s")]
    DegCmS,
}

impl MetricKind {
    pub const ALL: [MetricKind; 7] = [
        MetricKind::Add,
        MetricKind::AddS,
        MetricKind::AddOrAddS,
        MetricKind::Reproj,
        MetricKind::ReprojS,
        MetricKind::DegCm,
        MetricKind::DegCmS,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Add => "add",
            MetricKind::AddS => "adds",
            MetricKind::AddOrAddS => "add(-s)",
            MetricKind::Reproj => "reproj",
            MetricKind::ReprojS => "reproj-s",
            MetricKind::DegCm => "5cm5deg",
            MetricKind::DegCmS => "5cm5deg-s",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Acceptance {
    pub add: bool,
    pub adds: bool,
    pub add_or_adds: bool,
    pub reproj: bool,
    pub reproj_s: bool,
    pub deg_cm: bool,
    pub deg_cm_s: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricVerdict {
    /// Meters.
    pub add_value: f64,
    pub adds_value: f64,
    /// Base-image pixels.
    pub reproj_value: f64,
    pub reproj_s_value: f64,
    /// Degrees.
    pub rot_err: f64,
    /// Meters.
    pub trans_err: f64,
    /// Errors against the symmetric equivalent with the smallest rotation
    /// error among those accepted, else overall.
    pub rot_err_s: f64,
    pub trans_err_s: f64,
    pub symmetric: bool,
    pub accepted: Acceptance,
}

impl MetricVerdict {
    pub fn accepted(&self, kind: MetricKind) -> bool {
        let a = &self.accepted;
        match kind {
            MetricKind::Add => a.add,
            MetricKind::AddS => a.adds,
            MetricKind::AddOrAddS => a.add_or_adds,
            MetricKind::Reproj => a.reproj,
            MetricKind::ReprojS => a.reproj_s,
            MetricKind::DegCm => a.deg_cm,
            MetricKind::DegCmS => a.deg_cm_s,
        }
    }

    /// The scalar the acceptance of `kind` is based on (degrees for 5cm/5°).
    pub fn value(&self, kind: MetricKind) -> f64 {
        match kind {
            MetricKind::Add => self.add_value,
            MetricKind::AddS => self.adds_value,
            MetricKind::AddOrAddS if self.symmetric => self.adds_value,
            MetricKind::AddOrAddS => self.add_value,
            MetricKind::Reproj => self.reproj_value,
            MetricKind::ReprojS => self.reproj_s_value,
            MetricKind::DegCm => self.rot_err,
            MetricKind::DegCmS => self.rot_err_s,
        }
    }
}

/// All metrics for one estimate.
pub fn evaluate_instance(
    est: &Pose,
    gt: &Pose,
    points: &[Vector3<f64>],
    diameter: f64,
    intr: &CameraIntrinsics,
    symmetries: &SymmetrySet,
    th: &Thresholds,
) -> Result<MetricVerdict> {
    let add = add_value(est, gt, points)?;
    let adds = adds_value(est, gt, points)?;
    let reproj = reproj_value(est, gt, points, intr)?;
    let reproj_s = symmetric_metric(symmetries, gt, |g| reproj_value(est, g, points, intr))?;
    let (rot_err, trans_err, deg_cm) =
        deg_cm_metric(est, gt, th.rotation_deg, th.translation_m * 100.0);

    let mut best_s: Option<(f64, f64, bool)> = None;
    for g in symmetries.equivalents(gt) {
        let cand = deg_cm_metric(est, &g, th.rotation_deg, th.translation_m * 100.0);
        let better = match best_s {
            None => true,
            Some(b) => (cand.2 && !b.2) || (cand.2 == b.2 && cand.0 < b.0),
        };
        if better {
            best_s = Some(cand);
        }
    }
    let (rot_err_s, trans_err_s, deg_cm_s) = best_s.expect("set contains identity");

    let add_limit = th.add_fraction * diameter;
    let symmetric = !symmetries.is_trivial();
    let accepted = Acceptance {
        add: add < add_limit,
        adds: adds < add_limit,
        add_or_adds: if symmetric { adds < add_limit } else { add < add_limit },
        reproj: reproj < th.reproj_px,
        reproj_s: reproj_s < th.reproj_px,
        deg_cm,
        deg_cm_s,
    };
    Ok(MetricVerdict {
        add_value: add,
        adds_value: adds,
        reproj_value: reproj,
        reproj_s_value: reproj_s,
        rot_err,
        trans_err,
        rot_err_s,
        trans_err_s,
        symmetric,
        accepted,
    })
}

/// Percentage of accepted verdicts.
pub fn recall(verdicts: &[MetricVerdict], kind: MetricKind) -> Result<f64> {
    if verdicts.is_empty() {
        return Err(Error::invalid("recall of an empty verdict list"));
    }
    let n = verdicts.iter().filter(|v| v.accepted(kind)).count();
    Ok(100.0 * n as f64 / verdicts.len() as f64)
}

/// Unweighted mean of per-object recalls.
pub fn mean_recall(per_object: &[f64]) -> Result<f64> {
    if per_object.is_empty() {
        return Err(Error::invalid("mean of an empty recall list"));
    }
    Ok(per_object.iter().sum::<f64>() / per_object.len() as f64)
}

/// One evaluated (frame, object) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub frame_id: usize,
    pub object_id: String,
    pub verdict: MetricVerdict,
}

/// Per-object and mean recalls in percent, keyed by metric name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub metrics: Vec<MetricKind>,
    pub objects: BTreeMap<String, BTreeMap<String, f64>>,
    pub instances: BTreeMap<String, usize>,
    pub mean: BTreeMap<String, f64>,
}

pub fn summarize(rows: &[EvalRow]) -> Result<EvalSummary> {
    let mut by_object: BTreeMap<String, Vec<MetricVerdict>> = BTreeMap::new();
    for r in rows {
        by_object.entry(r.object_id.clone()).or_default().push(r.verdict);
    }
    if by_object.is_empty() {
        return Err(Error::invalid("nothing to summarize"));
    }
    let mut objects = BTreeMap::new();
    let mut instances = BTreeMap::new();
    let mut mean = BTreeMap::new();
    for kind in MetricKind::ALL {
        let mut recalls = Vec::new();
        for (obj, verdicts) in &by_object {
            let r = recall(verdicts, kind)?;
            recalls.push(r);
            objects
                .entry(obj.clone())
                .or_insert_with(BTreeMap::new)
                .insert(kind.name().to_string(), r);
            instances.insert(obj.clone(), verdicts.len());
        }
        mean.insert(kind.name().to_string(), mean_recall(&recalls)?);
    }
    Ok(EvalSummary {
        metrics: MetricKind::ALL.to_vec(),
        objects,
        instances,
        mean,
    })
}

impl EvalSummary {
    pub fn recall(&self, object: &str, kind: MetricKind) -> Option<f64> {
        self.objects.get(object)?.get(kind.name()).copied()
    }

    pub fn mean_of(&self, kind: MetricKind) -> Option<f64> {
        self.mean.get(kind.name()).copied()
    }

    /// Objects as rows, metrics as columns, plus a mean row.
    pub fn to_table(&self) -> String {
        let name_w = self
            .objects
            .keys()
            .map(|k| k.len())
            .chain(["object".len(), "mean".len()])
            .max()
            .unwrap_or(6);
        let col_w = self
            .metrics
            .iter()
            .map(|m| m.name().len())
            .max()
            .unwrap_or(6)
            .max(6);
        let mut out = String::new();
        let _ = write!(out, "{:<name_w$}", "object");
        for m in &self.metrics {
            let _ = write!(out, "  {:>col_w$}", m.name());
        }
        out.push('\n');
        let row = |out: &mut String, name: &str, vals: &BTreeMap<String, f64>| {
            let _ = write!(out, "{name:<name_w$}");
            for m in &self.metrics {
                let v = vals.get(m.name()).copied().unwrap_or(f64::NAN);
                let _ = write!(out, "  {v:>col_w$.2}");
            }
            out.push('\n');
        };
        for (obj, vals) in &self.objects {
            row(&mut out, obj, vals);
        }
        row(&mut out, "mean", &self.mean);
        out
    }
}

/// Columns: object, frame_id, metric, value, accepted.
pub fn write_csv(path: &Path, rows: &[EvalRow]) -> Result<()> {
    let mut out = String::from("object,frame_id,metric,value,accepted\n");
    for r in rows {
        for kind in MetricKind::ALL {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.object_id,
                r.frame_id,
                kind.name(),
                r.verdict.value(kind),
                r.verdict.accepted(kind)
            );
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
