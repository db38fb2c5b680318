//! Size-prior Perspective-n-Point baseline.
//!
//! The solver needs the body-frame keypoint layout in metres: the physical size prior.
//! Scaling that layout scales the recovered translation by the same factor, which is
//! exactly the dependence the learned decoder avoids.
//!
//! Pipeline: plane-fit of the layout, normalized DLT homography, decomposition into a
//! pose, a second candidate for the two-fold planar ambiguity, Levenberg-damped
//! Gauss-Newton refinement of both, selection by positive depth then residual.

use nalgebra::{DMatrix, Matrix3, Matrix6, Vector6};

use crate::geometry::{
    pixel_to_ray, skew, CameraIntrinsics, Mat3, RigidPose, RotationMatrix, Vec2, Vec3,
};
use crate::error::{Error, Result};

pub mod baseline;

pub use baseline::{run_baseline, KeypointSource};

#[derive(Debug, Clone, PartialEq)]
pub struct PnpProblem {
    /// Body-frame keypoints in metres (the size prior).
    pub points_3d_body: Vec<Vec3>,
    /// Observed pixels, same order as `points_3d_body`.
    pub points_2d: Vec<Vec2>,
    pub intrinsics: CameraIntrinsics,
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub initial_damping: f64,
    pub damping_factor: f64,
    pub max_iterations: usize,
    pub step_tolerance: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            initial_damping: 1e-3,
            damping_factor: 10.0,
            max_iterations: 100,
            step_tolerance: 1e-10,
        }
    }
}

/// A refined pose hypothesis.
#[derive(Debug, Clone, Copy)]
pub struct Candidate {
    pub pose: RigidPose,
    /// Mean squared reprojection error in px².
    pub residual: f64,
    pub all_in_front: bool,
    pub converged: bool,
    pub iterations: usize,
}

pub fn pnp_solve(problem: &PnpProblem) -> Result<RigidPose> {
    pnp_solve_with(problem, &LmOptions::default())
}

pub fn pnp_solve_with(problem: &PnpProblem, opts: &LmOptions) -> Result<RigidPose> {
    let candidates = pnp_candidates(problem, opts)?;
    let best = select(&candidates);
    if !best.converged {
        return Err(Error::NotConverged {
            best: Box::new(best.pose),
            residual: best.residual,
            iterations: best.iterations,
        });
    }
    Ok(best.pose)
}

/// Positive depth first, then lowest residual.
fn select(candidates: &[Candidate]) -> Candidate {
    *candidates
        .iter()
        .min_by(|a, b| {
            b.all_in_front
                .cmp(&a.all_in_front)
                .then(a.residual.total_cmp(&b.residual))
        })
        .expect("at least one candidate")
}

/// Both planar-ambiguity hypotheses after refinement.
pub fn pnp_candidates(problem: &PnpProblem, opts: &LmOptions) -> Result<Vec<Candidate>> {
    validate(problem)?;
    let frame = PlaneFrame::fit(&problem.points_3d_body)?;
    let rays = problem
        .points_2d
        .iter()
        .map(|p| pixel_to_ray(&problem.intrinsics, p).map(|v| Vec2::new(v.x / v.z, v.y / v.z)))
        .collect::<Result<Vec<_>>>()?;
    let plane_pts: Vec<Vec2> = problem
        .points_3d_body
        .iter()
        .map(|p| frame.to_plane(p))
        .collect();

    let h = homography(&plane_pts, &rays)?;
    let (rot_plane, t_plane) = decompose_homography(&h);
    let alt_plane = flip_about_line_of_sight(&rot_plane, &t_plane);

    let mut out = Vec::with_capacity(2);
    for rot in [rot_plane, alt_plane] {
        // camera = R' (plane coords) + t', and plane coords = Eᵀ (p − c).
        let rotation = RotationMatrix::orthonormalize(&(rot * frame.basis.transpose()));
        let translation = t_plane - rotation.apply(&frame.centroid);
        let init = RigidPose::new(rotation, translation);
        out.push(refine(problem, init, opts));
    }
    Ok(out)
}

fn validate(problem: &PnpProblem) -> Result<()> {
    problem.intrinsics.validate()?;
    let n = problem.points_3d_body.len();
    if n != problem.points_2d.len() {
        return Err(Error::Shape(format!(
            "{n} body points vs {} image points",
            problem.points_2d.len()
        )));
    }
    if n < 4 {
        return Err(Error::Shape(format!("need at least 4 correspondences, got {n}")));
    }
    let finite = problem.points_3d_body.iter().all(|p| p.iter().all(|v| v.is_finite()))
        && problem.points_2d.iter().all(|p| p.iter().all(|v| v.is_finite()));
    if !finite {
        return Err(Error::Degenerate("non-finite correspondence".into()));
    }
    Ok(())
}

struct PlaneFrame {
    centroid: Vec3,
    /// Columns: in-plane axes then normal; proper rotation.
    basis: Mat3,
}

impl PlaneFrame {
    fn fit(points: &[Vec3]) -> Result<Self> {
        let centroid = points.iter().sum::<Vec3>() / points.len() as f64;
        let mut scatter = Mat3::zeros();
        for p in points {
            let d = p - centroid;
            scatter += d * d.transpose();
        }
        let eig = scatter.symmetric_eigen();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let (l0, l1) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
        if !(l0 > 0.0) || l1 <= 1e-12 * l0 {
            return Err(Error::Degenerate("3D points are collinear".into()));
        }
        let e0 = eig.eigenvectors.column(order[0]).into_owned();
        let e1 = eig.eigenvectors.column(order[1]).into_owned();
        let basis = Mat3::from_columns(&[e0, e1, e0.cross(&e1)]);
        Ok(Self { centroid, basis })
    }

    fn to_plane(&self, p: &Vec3) -> Vec2 {
        let d = self.basis.transpose() * (p - self.centroid);
        Vec2::new(d.x, d.y)
    }
}

/// Similarity transform moving points to zero mean and mean distance √2.
fn normalizer(pts: &[Vec2]) -> Matrix3<f64> {
    let c = pts.iter().sum::<Vec2>() / pts.len() as f64;
    let mean_dist = pts.iter().map(|p| (p - c).norm()).sum::<f64>() / pts.len() as f64;
    let s = if mean_dist > 0.0 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

/// Normalized DLT: `dst ~ H [src, 1]`.
fn homography(src: &[Vec2], dst: &[Vec2]) -> Result<Matrix3<f64>> {
    let ns = normalizer(src);
    let nd = normalizer(dst);
    let n = src.len();
    let mut a = DMatrix::<f64>::zeros(2 * n.max(5), 9);
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let s = ns * Vec3::new(s.x, s.y, 1.0);
        let d = nd * Vec3::new(d.x, d.y, 1.0);
        let (x, y) = (s.x / s.z, s.y / s.z);
        let (u, v) = (d.x / d.z, d.y / d.z);
        a.row_mut(2 * i)
            .copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(2 * i + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    // Zero padding rows keep the SVD square enough to expose the null vector.
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Degenerate("homography SVD failed".into()))?;
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("nine singular values");
    let h = v_t.row(min_idx);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let nd_inv = nd
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("image points coincide".into()))?;
    Ok(nd_inv * hn * ns)
}

/// Splits `H ∝ [r1 r2 t]` into a plane-to-camera rotation and translation.
fn decompose_homography(h: &Matrix3<f64>) -> (Mat3, Vec3) {
    let h1 = h.column(0).into_owned();
    let h2 = h.column(1).into_owned();
    let h3 = h.column(2).into_owned();
    let mut scale = 2.0 / (h1.norm() + h2.norm());
    if h3.z * scale < 0.0 {
        scale = -scale;
    }
    let r1 = h1 * scale;
    let r2 = h2 * scale;
    let r = Mat3::from_columns(&[r1, r2, r1.cross(&r2)]);
    (*RotationMatrix::orthonormalize(&r).matrix(), h3 * scale)
}

/// Second planar hypothesis: the plane normal mirrored about the line of sight.
fn flip_about_line_of_sight(rot: &Mat3, t: &Vec3) -> Mat3 {
    let n = rot.column(2).into_owned();
    let v = t.normalize();
    let mirrored = v * (2.0 * n.dot(&v)) - n;
    let axis = n.cross(&mirrored);
    let sin = axis.norm();
    let cos = n.dot(&mirrored).clamp(-1.0, 1.0);
    if sin < 1e-12 {
        return *rot;
    }
    let turn = RotationMatrix::from_axis_angle(&(axis / sin * sin.atan2(cos)));
    turn.matrix() * rot
}

/// Pixel residuals `π(K (R p + t)) − p_obs`; `None` when some point is behind the camera.
fn residuals(problem: &PnpProblem, pose: &RigidPose) -> Option<Vec<f64>> {
    let k = &problem.intrinsics;
    let mut out = Vec::with_capacity(2 * problem.points_2d.len());
    for (p, obs) in problem.points_3d_body.iter().zip(&problem.points_2d) {
        let x = pose.transform(p);
        if x.z <= 0.0 {
            return None;
        }
        out.push(k.fx * x.x / x.z + k.cx - obs.x);
        out.push(k.fy * x.y / x.z + k.cy - obs.y);
    }
    Some(out)
}

fn mean_sq(res: &[f64]) -> f64 {
    // Mean over correspondences of the squared pixel distance.
    2.0 * res.iter().map(|r| r * r).sum::<f64>() / res.len() as f64
}

/// Mean squared reprojection error in px², or infinity if a point is behind the camera.
pub fn reprojection_error(problem: &PnpProblem, pose: &RigidPose) -> f64 {
    residuals(problem, pose).map_or(f64::INFINITY, |r| mean_sq(&r))
}

fn all_in_front(problem: &PnpProblem, pose: &RigidPose) -> bool {
    problem
        .points_3d_body
        .iter()
        .all(|p| pose.transform(p).z > 0.0)
}

/// Normal equations for the left-perturbation `R ← exp(ω) R`, `t ← t + δt`.
fn normal_equations(problem: &PnpProblem, pose: &RigidPose) -> (Matrix6<f64>, Vector6<f64>) {
    let k = &problem.intrinsics;
    let mut jtj = Matrix6::zeros();
    let mut jtr = Vector6::zeros();
    for (p, obs) in problem.points_3d_body.iter().zip(&problem.points_2d) {
        let rp = pose.rotation.apply(p);
        let x = rp + pose.translation;
        let iz = 1.0 / x.z;
        let dpi = nalgebra::Matrix2x3::new(
            k.fx * iz,
            0.0,
            -k.fx * x.x * iz * iz,
            0.0,
            k.fy * iz,
            -k.fy * x.y * iz * iz,
        );
        let mut dx = nalgebra::Matrix3x6::zeros();
        dx.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&rp)));
        dx.fixed_view_mut::<3, 3>(0, 3).copy_from(&Mat3::identity());
        let j = dpi * dx;
        let r = nalgebra::Vector2::new(
            k.fx * x.x * iz + k.cx - obs.x,
            k.fy * x.y * iz + k.cy - obs.y,
        );
        jtj += j.transpose() * j;
        jtr += j.transpose() * r;
    }
    (jtj, jtr)
}

fn apply_step(pose: &RigidPose, step: &Vector6<f64>) -> RigidPose {
    let omega = Vec3::new(step[0], step[1], step[2]);
    let rot = RotationMatrix::from_axis_angle(&omega).compose(&pose.rotation);
    RigidPose::new(
        RotationMatrix::orthonormalize(rot.matrix()),
        pose.translation + Vec3::new(step[3], step[4], step[5]),
    )
}

fn refine(problem: &PnpProblem, init: RigidPose, opts: &LmOptions) -> Candidate {
    let mut pose = init;
    let mut cost = reprojection_error(problem, &pose);
    let mut lambda = opts.initial_damping;
    let mut converged = false;
    let mut iterations = 0;

    if cost.is_finite() {
        while iterations < opts.max_iterations {
            iterations += 1;
            if cost == 0.0 {
                converged = true;
                break;
            }
            let (jtj, jtr) = normal_equations(problem, &pose);
            let mut damped = jtj;
            for i in 0..6 {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-jtr))) else {
                lambda *= opts.damping_factor;
                continue;
            };
            let trial = apply_step(&pose, &step);
            let trial_cost = reprojection_error(problem, &trial);
            if trial_cost < cost {
                pose = trial;
                cost = trial_cost;
                lambda /= opts.damping_factor;
            } else {
                lambda *= opts.damping_factor;
            }
            if step.norm() < opts.step_tolerance {
                converged = true;
                break;
            }
        }
    }

    Candidate {
        pose,
        residual: cost,
        all_in_front: all_in_front(problem, &pose),
        converged,
        iterations,
    }
}
