//! Joint refinement of object poses, vertex positions and vertex colors
//! against the input view, with periodic novel-view critic steps.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::quantize;
use crate::image::ImageBuffer;
use crate::providers::{CriticRequest, ProviderError, ProviderSet};
use crate::raster::{RenderAdjoint, RenderOutput, SceneGradients, SoftRasterConfig, SoftRenderer};
use crate::scene::{spiral_trajectory, AffineParams, PinholeCamera, Scene, Vec3};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub mask: f64,
    pub rgb: f64,
    pub depth: f64,
    pub diff: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mask: 1.0,
            rgb: 1.0,
            depth: 1.0,
            diff: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    /// A critic step runs after every `edit_every`-th input-view step.
    pub edit_every: usize,
    /// Noise level forwarded verbatim to the critic provider.
    pub critic_noise_level: f64,
    pub critic_steps: usize,
    pub loss_weights: LossWeights,
    /// Vertex positions stay fixed for this many iterations.
    pub geometry_freeze_iters: usize,
    /// Weight of the mean squared displacement from the coarse vertex positions.
    pub position_reg: f64,
    /// Weight of the squared log-scale change from the coarse estimate.
    pub scale_reg: f64,
    /// Number of poses on the spiral the critic cycles through.
    pub spiral_poses: usize,
    pub sigma: f64,
    /// Coverage ramp width at iteration 0, decayed geometrically to `sigma`
    /// over `sigma_anneal_iters`.
    pub initial_sigma: f64,
    pub sigma_anneal_iters: usize,
    /// Target depth within this many pixels of a mask boundary is ignored.
    pub depth_edge_margin: usize,
    pub background_color: [f64; 3],
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            iterations: 7500,
            edit_every: 10,
            critic_noise_level: 100.0,
            critic_steps: 10,
            loss_weights: LossWeights::default(),
            geometry_freeze_iters: 500,
            position_reg: 1e-2,
            scale_reg: 1e-3,
            spiral_poses: 40,
            sigma: 1.0,
            initial_sigma: 8.0,
            sigma_anneal_iters: 500,
            depth_edge_margin: 5,
            background_color: [0.5; 3],
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be positive");
        }
        if self.edit_every == 0 {
            return bad("edit_every must be at least 1");
        }
        if self.critic_steps == 0 || self.spiral_poses < 2 {
            return bad("critic_steps must be positive and spiral_poses at least 2");
        }
        if !(self.critic_noise_level >= 0.0) {
            return bad("critic_noise_level must be non-negative");
        }
        let w = &self.loss_weights;
        if ![w.mask, w.rgb, w.depth, w.diff, self.position_reg, self.scale_reg].iter().all(|v| *v >= 0.0 && v.is_finite()) {
            return bad("loss weights and regularizers must be finite and non-negative");
        }
        if !(self.sigma > 0.0) || !(self.initial_sigma > 0.0) {
            return bad("sigma and initial_sigma must be positive");
        }
        if !self.background_color.iter().all(|c| (0.0..=1.0).contains(c)) {
            return bad("background_color must lie in [0, 1]");
        }
        Ok(())
    }

    /// Coverage ramp width used at `iteration`.
    pub fn sigma_at(&self, iteration: usize) -> f64 {
        if iteration >= self.sigma_anneal_iters {
            return self.sigma;
        }
        let f = iteration as f64 / self.sigma_anneal_iters as f64;
        self.initial_sigma * (self.sigma / self.initial_sigma).powf(f)
    }

    pub fn raster(&self) -> SoftRasterConfig {
        SoftRasterConfig {
            sigma: self.sigma,
            background_color: self.background_color,
            ..SoftRasterConfig::default()
        }
    }
}

/// Input-view supervision: the image, one mask per object and metric depth
/// with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineTargets {
    pub image: ImageBuffer,
    pub masks: Vec<ImageBuffer>,
    pub depth: ImageBuffer,
}

impl RefineTargets {
    /// Marks target depth invalid wherever the mask labelling changes within
    /// `margin` pixels (Chebyshev distance). Soft edges blend the depths of
    /// neighbouring surfaces, so those pixels would bias the depth term.
    pub fn trim_depth_edges(&mut self, margin: usize) {
        if margin == 0 {
            return;
        }
        let (w, h) = (self.depth.width(), self.depth.height());
        let bits: Vec<Vec<bool>> = self.masks.iter().map(|m| m.mask_bits()).collect();
        let label: Vec<usize> = (0..w * h)
            .map(|k| bits.iter().position(|b| b[k]).unwrap_or(usize::MAX))
            .collect();
        let mut valid: Vec<bool> = (0..w * h).map(|k| self.depth.is_valid_index(k)).collect();
        for y in 0..h {
            for x in 0..w {
                let k = y * w + x;
                if !valid[k] {
                    continue;
                }
                let (y0, y1) = (y.saturating_sub(margin), (y + margin).min(h - 1));
                let (x0, x1) = (x.saturating_sub(margin), (x + margin).min(w - 1));
                let edge = (y0..=y1).any(|yy| (x0..=x1).any(|xx| label[yy * w + xx] != label[k]));
                if edge {
                    valid[k] = false;
                }
            }
        }
        self.depth.set_validity(Some(valid));
    }

    fn check(&self, render: &RenderOutput) -> Result<()> {
        let (w, h) = (render.width(), render.height());
        let fits = |b: &ImageBuffer, ch: usize| b.width() == w && b.height() == h && b.channels() == ch;
        if !fits(&self.image, 3) || !fits(&self.depth, 1) || !self.masks.iter().all(|m| fits(m, 1)) {
            return Err(Error::InvalidArgument(format!("targets do not match the {w}x{h} render")));
        }
        if self.masks.len() != render.object_masks.len() {
            return Err(Error::InvalidArgument(format!(
                "{} target masks for {} objects",
                self.masks.len(),
                render.object_masks.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InputViewLoss {
    pub total: f64,
    pub mask: f64,
    pub rgb: f64,
    pub depth: f64,
}

fn input_view(
    render: &RenderOutput,
    targets: &RefineTargets,
    weights: &LossWeights,
    mut adjoint: Option<&mut RenderAdjoint>,
) -> Result<InputViewLoss> {
    targets.check(render)?;
    let n = (render.width() * render.height()) as f64;

    let mut mask = 0.0;
    for (i, (m, t)) in render.object_masks.iter().zip(&targets.masks).enumerate() {
        let mut s = 0.0;
        for (k, (a, b)) in m.data().iter().zip(t.data()).enumerate() {
            let r = a - b;
            s += r * r;
            if let Some(adj) = adjoint.as_deref_mut() {
                adj.object_masks[i].data_mut()[k] = weights.mask * 2.0 * r / n;
            }
        }
        mask += s / n;
    }

    let nc = render.color.data().len() as f64;
    let mut rgb = 0.0;
    for (k, (a, b)) in render.color.data().iter().zip(targets.image.data()).enumerate() {
        let r = a - b;
        rgb += r * r;
        if let Some(adj) = adjoint.as_deref_mut() {
            adj.color.data_mut()[k] = weights.rgb * 2.0 * r / nc;
        }
    }
    rgb /= nc;

    // Coverage-weighted on target-valid pixels: cov * (D - D*)^2.
    let nv = targets.depth.valid_count();
    let mut depth = 0.0;
    if nv > 0 {
        let nv = nv as f64;
        for k in 0..targets.depth.data().len() {
            if !targets.depth.is_valid_index(k) || !render.depth.is_valid_index(k) {
                continue;
            }
            let cov = render.coverage.data()[k];
            let r = render.depth.data()[k] - targets.depth.data()[k];
            depth += cov * r * r;
            if let Some(adj) = adjoint.as_deref_mut() {
                adj.depth.data_mut()[k] = weights.depth * 2.0 * cov * r / nv;
                adj.coverage.data_mut()[k] = weights.depth * r * r / nv;
            }
        }
        depth /= nv;
    }

    Ok(InputViewLoss {
        total: weights.mask * mask + weights.rgb * rgb + weights.depth * depth,
        mask,
        rgb,
        depth,
    })
}

/// Mask, color and depth losses of a render against the input-view targets.
pub fn input_view_loss(render: &RenderOutput, targets: &RefineTargets, weights: &LossWeights) -> Result<InputViewLoss> {
    input_view(render, targets, weights, None)
}

/// [`input_view_loss`] plus its cotangent with respect to every render output.
pub fn input_view_adjoint(
    render: &RenderOutput,
    targets: &RefineTargets,
    weights: &LossWeights,
) -> Result<(InputViewLoss, RenderAdjoint)> {
    let mut adj = RenderAdjoint::zeros(render.width(), render.height(), render.object_masks.len());
    let loss = input_view(render, targets, weights, Some(&mut adj))?;
    Ok((loss, adj))
}

/// Critic provider inputs shared by every critic step.
#[derive(Debug, Clone, Copy)]
pub struct CriticContext<'a> {
    pub condition: &'a ImageBuffer,
    pub caption: &'a str,
    pub noise_level: f64,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct CriticStep {
    pub loss: f64,
    /// Only vertex colors are nonzero.
    pub gradients: SceneGradients,
    pub refined: ImageBuffer,
}

/// Renders the scene at `pose`, asks the critic for a cleaned image and
/// returns the mean squared difference with its color-only gradient.
///
/// The render travels to the critic as 8-bit PNG, so the residual is taken
/// against the quantized render; an identity critic then yields exactly zero.
pub fn critic_refine_step(
    scene: &Scene,
    renderer: &SoftRenderer,
    pose: &PinholeCamera,
    raster: &SoftRasterConfig,
    context: &CriticContext<'_>,
    providers: &mut dyn ProviderSet,
) -> Result<CriticStep, CriticError> {
    let (out, tape) = renderer.forward(scene, pose, raster);
    let request = CriticRequest {
        render: &out.color,
        condition: context.condition,
        prompt: context.caption,
        noise_level: context.noise_level,
        steps: context.steps,
    };
    let refined = providers.critic(&request)?;
    let sent = quantize(&out.color);
    let n = sent.data().len() as f64;
    let mut adj = RenderAdjoint::zeros(out.width(), out.height(), scene.objects.len());
    let mut loss = 0.0;
    for (k, (a, b)) in sent.data().iter().zip(refined.data()).enumerate() {
        let r = a - b;
        loss += r * r;
        adj.color.data_mut()[k] = 2.0 * r / n;
    }
    loss /= n;
    let full = renderer.backward(scene, pose, raster, &tape, &adj)?;
    let mut gradients = SceneGradients::zeros(scene);
    for (g, f) in gradients.objects.iter_mut().zip(full.objects) {
        g.mesh.colors = f.mesh.colors;
    }
    gradients.background.colors = full.background.colors;
    Ok(CriticStep {
        loss,
        gradients,
        refined,
    })
}

#[derive(Debug, thiserror::Error)]
pub enum CriticError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Render(#[from] Error),
}

/// One row of the loss history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub mask: f64,
    pub rgb: f64,
    pub depth: f64,
    pub diff: Option<f64>,
    /// Weighted input-view loss plus the weighted critic loss when one ran.
    pub total: f64,
}

impl LossRecord {
    pub fn input_view_total(&self, w: &LossWeights) -> f64 {
        w.mask * self.mask + w.rgb * self.rgb + w.depth * self.depth
    }
}

pub fn write_history_csv(path: &Path, history: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format("loss history", e.to_string()))?;
    for r in history {
        w.serialize(r).map_err(|e| Error::format("loss history", e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history_csv(path: &Path) -> Result<Vec<LossRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format("loss history", e.to_string()))?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::format("loss history", e.to_string()))
}

/// Adam with a per-entry step count, so entries that start late get their
/// own bias correction.
#[derive(Debug, Clone)]
struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: Vec<i32>,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: vec![0; n],
        }
    }

    /// Turns gradients into steps in place; inactive entries get a zero step.
    fn step(&mut self, g: &mut [f64], active: &[bool]) {
        for i in 0..g.len() {
            if !active[i] {
                g[i] = 0.0;
                continue;
            }
            self.t[i] += 1;
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let mh = self.m[i] / (1.0 - ADAM_BETA1.powi(self.t[i]));
            let vh = self.v[i] / (1.0 - ADAM_BETA2.powi(self.t[i]));
            g[i] = self.lr * mh / (vh.sqrt() + ADAM_EPS);
        }
    }
}

/// Flattened trainable layout: per object ray position, rotation tangent,
/// relative log scale, local positions and colors; then background colors.
fn flatten(g: &SceneGradients) -> Vec<f64> {
    let mut out = Vec::new();
    for o in &g.objects {
        out.extend(o.translation.iter().chain(o.rotation.iter()).chain(o.log_scale.iter()));
        out.extend(o.mesh.positions.iter().flat_map(|p| p.iter().copied()));
        out.extend(o.mesh.colors.iter().flatten());
    }
    out.extend(g.background.colors.iter().flatten());
    out
}

fn position_mask(scene: &Scene, positions: bool) -> Vec<bool> {
    let mut out = Vec::new();
    for o in &scene.objects {
        let n = o.mesh.vertices.len();
        out.extend([true; 9]);
        out.extend(std::iter::repeat(positions).take(3 * n));
        out.extend(std::iter::repeat(true).take(3 * n));
    }
    out.extend(std::iter::repeat(true).take(3 * scene.background.vertices.len()));
    out
}

/// Object placement as the optimizer sees it: image-plane direction
/// `(x/z, y/z)` and `ln z` of the center in the input camera frame, plus log
/// scale relative to `ln z`. Scaling an object about the camera center then
/// moves `ln z` alone, which only the depth term can observe.
fn ray_params(camera: &PinholeCamera, affine: &AffineParams) -> Option<(Vec3, Vec3)> {
    let p = camera.world_to_camera(&affine.translation);
    if !(p.z > 0.0) {
        return None;
    }
    let q = p.z.ln();
    Some((Vec3::new(p.x / p.z, p.y / p.z, q), affine.log_scale - Vec3::repeat(q)))
}

fn from_ray_params(camera: &PinholeCamera, ray: &Vec3, rel_scale: &Vec3, affine: &mut AffineParams) {
    let z = ray.z.exp();
    affine.translation = camera.camera_to_world(&Vec3::new(ray.x * z, ray.y * z, z));
    affine.log_scale = rel_scale + Vec3::repeat(ray.z);
}

/// Rewrites translation and log-scale gradients in ray parameters.
fn to_ray_gradients(camera: &PinholeCamera, scene: &Scene, grads: &mut SceneGradients) -> std::result::Result<(), String> {
    for (i, (g, o)) in grads.objects.iter_mut().zip(&scene.objects).enumerate() {
        let p = camera.world_to_camera(&o.affine.translation);
        if !(p.z > 0.0) {
            return Err(format!("object {i} is behind the camera"));
        }
        let gp = camera.rotation * g.translation;
        let gq = p.dot(&gp) + g.log_scale.sum();
        g.translation = Vec3::new(p.z * gp.x, p.z * gp.y, gq);
    }
    Ok(())
}

fn apply_step(scene: &mut Scene, camera: &PinholeCamera, step: &[f64]) {
    let mut k = 0;
    let take3 = |k: &mut usize| {
        let v = Vec3::new(step[*k], step[*k + 1], step[*k + 2]);
        *k += 3;
        v
    };
    for o in &mut scene.objects {
        // The ray round trip is not bit-exact, so a zero step must skip it.
        if step[k..k + 9].iter().any(|&v| v != 0.0) {
            let (ray, rel) = ray_params(camera, &o.affine).expect("checked when the gradients were converted");
            let ray = ray - take3(&mut k);
            let dr = take3(&mut k);
            o.affine.rotate_by_tangent(&-dr);
            let rel = rel - take3(&mut k);
            from_ray_params(camera, &ray, &rel, &mut o.affine);
        } else {
            k += 9;
        }
        for p in &mut o.mesh.vertices {
            *p -= take3(&mut k);
        }
        for c in &mut o.mesh.colors {
            let d = take3(&mut k);
            *c = [0, 1, 2].map(|j| (c[j] - d[j]).clamp(0.0, 1.0));
        }
    }
    for c in &mut scene.background.colors {
        let d = take3(&mut k);
        *c = [0, 1, 2].map(|j| (c[j] - d[j]).clamp(0.0, 1.0));
    }
}

/// Summary of a finished run.
#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub scene: Scene,
    pub history: Vec<LossRecord>,
    pub critic_calls: usize,
    pub critic_skips: usize,
}

/// Stepwise optimizer state. After an error the scene holds the last
/// parameters whose loss was finite, and the history is kept.
pub struct Refiner {
    scene: Scene,
    camera: PinholeCamera,
    targets: RefineTargets,
    config: RefineConfig,
    raster: SoftRasterConfig,
    renderer: SoftRenderer,
    adam: Adam,
    anchors: Vec<Vec<Vec3>>,
    scale_anchors: Vec<Vec3>,
    poses: Vec<PinholeCamera>,
    next_pose: usize,
    caption: String,
    history: Vec<LossRecord>,
    iteration: usize,
    critic_calls: usize,
    critic_skips: usize,
}

impl Refiner {
    pub fn new(
        scene: Scene,
        camera: PinholeCamera,
        targets: RefineTargets,
        caption: impl Into<String>,
        config: RefineConfig,
    ) -> Result<Self> {
        config.validate()?;
        camera.validate()?;
        for o in &scene.objects {
            o.affine.validate()?;
        }
        if targets.image.width() != camera.width || targets.image.height() != camera.height {
            return Err(Error::InvalidArgument("target image does not match the camera".into()));
        }
        if targets.masks.len() != scene.objects.len() {
            return Err(Error::InvalidArgument(format!(
                "{} target masks for {} objects",
                targets.masks.len(),
                scene.objects.len()
            )));
        }
        let mut targets = targets;
        targets.trim_depth_edges(config.depth_edge_margin);
        let bounds = scene
            .bounds()
            .ok_or_else(|| Error::InvalidArgument("scene has no vertices".into()))?;
        let poses = spiral_trajectory(&camera, &bounds, config.spiral_poses)?;
        let n = flatten(&SceneGradients::zeros(&scene)).len();
        Ok(Self {
            renderer: SoftRenderer::new(&scene),
            raster: config.raster(),
            adam: Adam::new(n, config.learning_rate),
            anchors: scene.objects.iter().map(|o| o.mesh.vertices.clone()).collect(),
            scale_anchors: scene.objects.iter().map(|o| o.affine.log_scale).collect(),
            poses,
            next_pose: 1,
            caption: caption.into(),
            history: Vec::new(),
            iteration: 0,
            critic_calls: 0,
            critic_skips: 0,
            scene,
            camera,
            targets,
            config,
        })
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn history(&self) -> &[LossRecord] {
        &self.history
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn critic_calls(&self) -> usize {
        self.critic_calls
    }

    pub fn renderer(&self) -> &SoftRenderer {
        &self.renderer
    }

    /// Soft render of the current scene at the input camera.
    pub fn render(&self) -> RenderOutput {
        self.renderer.forward(&self.scene, &self.camera, &self.config.raster()).0
    }

    pub fn evaluate(&self) -> Result<InputViewLoss> {
        input_view_loss(&self.render(), &self.targets, &self.config.loss_weights)
    }

    fn numerical(&self, message: impl Into<String>) -> Error {
        Error::NumericalFailure {
            iteration: self.iteration,
            message: message.into(),
        }
    }

    /// One Adam step on the input-view loss, plus the critic loss when the
    /// schedule calls for it.
    pub fn step(&mut self, providers: &mut dyn ProviderSet) -> Result<LossRecord> {
        let t = self.iteration;
        let w = self.config.loss_weights;
        self.raster.sigma = self.config.sigma_at(t);
        let (out, tape) = self.renderer.forward(&self.scene, &self.camera, &self.raster);
        let (loss, adj) = input_view_adjoint(&out, &self.targets, &w)?;
        if !loss.total.is_finite() {
            return Err(self.numerical(format!("input-view loss is {}", loss.total)));
        }
        if !adj.is_finite() {
            return Err(self.numerical("non-finite input-view loss gradient"));
        }
        let mut grads = self.renderer.backward(&self.scene, &self.camera, &self.raster, &tape, &adj)?;

        let mut diff = None;
        if (t + 1) % self.config.edit_every == 0 {
            diff = self.critic(providers, &mut grads)?;
        }

        let geometry = t >= self.config.geometry_freeze_iters;
        if geometry && self.config.position_reg > 0.0 {
            for ((g, o), anchor) in grads.objects.iter_mut().zip(&self.scene.objects).zip(&self.anchors) {
                let k = 2.0 * self.config.position_reg / anchor.len().max(1) as f64;
                for ((gp, p), a) in g.mesh.positions.iter_mut().zip(&o.mesh.vertices).zip(anchor) {
                    *gp += k * (p - a);
                }
            }
        }
        for ((g, o), a) in grads.objects.iter_mut().zip(&self.scene.objects).zip(&self.scale_anchors) {
            g.log_scale += 2.0 * self.config.scale_reg * (o.affine.log_scale - a);
        }
        if !grads.is_finite() {
            return Err(self.numerical("non-finite gradient"));
        }
        to_ray_gradients(&self.camera, &self.scene, &mut grads).map_err(|m| self.numerical(m))?;
        let mut step = flatten(&grads);
        self.adam.step(&mut step, &position_mask(&self.scene, geometry));
        apply_step(&mut self.scene, &self.camera, &step);

        let record = LossRecord {
            iteration: t,
            mask: loss.mask,
            rgb: loss.rgb,
            depth: loss.depth,
            diff,
            total: loss.total + diff.map_or(0.0, |d| w.diff * d),
        };
        self.history.push(record);
        self.iteration += 1;
        Ok(record)
    }

    fn critic(&mut self, providers: &mut dyn ProviderSet, grads: &mut SceneGradients) -> Result<Option<f64>> {
        let pose = self.poses[self.next_pose];
        self.next_pose = if self.next_pose + 1 == self.poses.len() { 1 } else { self.next_pose + 1 };
        self.critic_calls += 1;
        let context = CriticContext {
            condition: &self.targets.image,
            caption: &self.caption,
            noise_level: self.config.critic_noise_level,
            steps: self.config.critic_steps,
        };
        match critic_refine_step(&self.scene, &self.renderer, &pose, &self.raster, &context, providers) {
            Ok(c) => {
                if !c.loss.is_finite() {
                    return Err(self.numerical(format!("critic loss is {}", c.loss)));
                }
                let wd = self.config.loss_weights.diff;
                for (g, cg) in grads.objects.iter_mut().zip(&c.gradients.objects) {
                    add_colors(&mut g.mesh.colors, &cg.mesh.colors, wd);
                }
                add_colors(&mut grads.background.colors, &c.gradients.background.colors, wd);
                Ok(Some(c.loss))
            }
            Err(CriticError::Provider(e)) => {
                log::warn!("critic step at iteration {} skipped: {e}", self.iteration);
                self.critic_skips += 1;
                Ok(None)
            }
            Err(CriticError::Render(e)) => Err(e),
        }
    }

    /// Runs the remaining iterations and appends a final record, numbered
    /// `iterations`, for the optimized scene.
    pub fn run(mut self, providers: &mut dyn ProviderSet) -> Result<RefineOutcome, (Error, Box<Refiner>)> {
        while self.iteration < self.config.iterations {
            if let Err(e) = self.step(providers) {
                return Err((e, Box::new(self)));
            }
            if self.iteration % 100 == 0 {
                let r = self.history.last().expect("a step was recorded");
                log::info!("iteration {}: loss {:.6}", r.iteration, r.total);
            }
        }
        let last = match self.evaluate() {
            Ok(l) if l.total.is_finite() => l,
            Ok(l) => {
                let e = self.numerical(format!("final loss is {}", l.total));
                return Err((e, Box::new(self)));
            }
            Err(e) => return Err((e, Box::new(self))),
        };
        self.history.push(LossRecord {
            iteration: self.iteration,
            mask: last.mask,
            rgb: last.rgb,
            depth: last.depth,
            diff: None,
            total: last.total,
        });
        Ok(RefineOutcome {
            scene: self.scene,
            history: self.history,
            critic_calls: self.critic_calls,
            critic_skips: self.critic_skips,
        })
    }
}

fn add_colors(dst: &mut [[f64; 3]], src: &[[f64; 3]], w: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        for j in 0..3 {
            d[j] += w * s[j];
        }
    }
}

/// Refines `scene` against the input-view targets. See [`Refiner`] for
/// stepwise control.
pub fn refine(
    scene: Scene,
    camera: &PinholeCamera,
    targets: RefineTargets,
    caption: &str,
    providers: &mut dyn ProviderSet,
    config: &RefineConfig,
) -> Result<RefineOutcome> {
    Refiner::new(scene, *camera, targets, caption, config.clone())?
        .run(providers)
        .map_err(|(e, _)| e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn render(w: usize, h: usize, objects: usize) -> RenderOutput {
        RenderOutput {
            object_masks: vec![ImageBuffer::new(w, h, 1); objects],
            depth: ImageBuffer::filled(w, h, 1, 2.0).with_validity(vec![true; w * h]).unwrap(),
            color: ImageBuffer::from_rgb(w, h, [0.3; 3]),
            coverage: ImageBuffer::filled(w, h, 1, 1.0),
        }
    }

    fn targets_of(r: &RenderOutput) -> RefineTargets {
        RefineTargets {
            image: r.color.clone(),
            masks: r.object_masks.clone(),
            depth: r.depth.clone(),
        }
    }

    #[test]
    fn zero_step_leaves_the_scene_bitwise_unchanged() {
        let camera = crate::scene::default_camera(32, 24).unwrap();
        let mut affine = AffineParams::identity();
        affine.translation = Vec3::new(0.137, -0.291, 2.718);
        affine.rotation = nalgebra::UnitQuaternion::from_euler_angles(0.3, -0.7, 1.1);
        affine.log_scale = Vec3::new(0.1, -0.23, 0.05);
        let mut scene = Scene {
            objects: vec![crate::scene::SceneObject {
                affine,
                mesh: crate::primitives::cuboid(Vec3::new(0.3, 0.2, 0.1), 2, |_| [0.4, 0.5, 0.6]),
            }],
            background: crate::scene::TriangleMesh::default(),
        };
        let before = scene.clone();
        let step = vec![0.0; flatten(&SceneGradients::zeros(&scene)).len()];
        apply_step(&mut scene, &camera, &step);
        assert_eq!(scene, before);
    }

    #[test]
    fn depth_edges_trimmed_around_mask_boundaries() {
        let mut bits = vec![false; 12 * 12];
        for y in 4..8 {
            for x in 4..8 {
                bits[y * 12 + x] = true;
            }
        }
        let mut t = RefineTargets {
            image: ImageBuffer::new(12, 12, 3),
            masks: vec![ImageBuffer::from_mask_bits(12, 12, &bits)],
            depth: ImageBuffer::filled(12, 12, 1, 2.0),
        };
        t.trim_depth_edges(1);
        let v = t.depth.validity().unwrap();
        // Rows 3..=8 and columns 3..=8 touch the boundary; the rest survive.
        for y in 0..12 {
            for x in 0..12 {
                let near = (3..=8).contains(&x) && (3..=8).contains(&y);
                let inner = (5..=6).contains(&x) && (5..=6).contains(&y);
                assert_eq!(v[y * 12 + x], !near || inner, "({x}, {y})");
            }
        }
    }

    #[test]
    fn identical_targets_cost_nothing() {
        let r = render(6, 4, 2);
        let l = input_view_loss(&r, &targets_of(&r), &LossWeights::default()).unwrap();
        assert_eq!(l, InputViewLoss::default());
    }

    #[test]
    fn half_wrong_mask_and_rgb_offset() {
        let r = render(4, 4, 1);
        let mut t = targets_of(&r);
        for k in 0..8 {
            t.masks[0].data_mut()[k] = 1.0;
        }
        t.image = ImageBuffer::from_rgb(4, 4, [0.4; 3]);
        let l = input_view_loss(&r, &t, &LossWeights::default()).unwrap();
        assert!((l.mask - 0.5).abs() < 1e-15);
        assert!((l.rgb - 0.01).abs() < 1e-15);
        assert_eq!(l.depth, 0.0);
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let r = render(4, 4, 1);
        let mut t = targets_of(&r);
        t.image = ImageBuffer::from_rgb(5, 4, [0.0; 3]);
        assert!(matches!(
            input_view_loss(&r, &t, &LossWeights::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut a = Adam::new(3, 0.1);
        let mut g = vec![5.0, -0.01, 0.0];
        a.step(&mut g, &[true, true, false]);
        assert!((g[0] - 0.1).abs() < 1e-8 && (g[1] + 0.1).abs() < 1e-6 && g[2] == 0.0);
        assert_eq!(a.t, vec![1, 1, 0]);
    }

    #[test]
    fn config_rejects_zero_edit_rate() {
        let c = RefineConfig {
            edit_every: 0,
            ..RefineConfig::default()
        };
        assert!(c.validate().is_err());
        assert!(RefineConfig::default().validate().is_ok());
    }
}
