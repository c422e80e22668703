//! Staged optimization: view-independent bootstrap, reflection training with
//! normal propagation and color sabotage, interleaved opacity clamping,
//! densification, specular termination and higher-order SH unlock.

pub mod config;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use config::TrainConfig;

use crate::dataset::{Dataset, View};
use crate::envmap::EnvironmentMap;
use crate::error::{Error, Result};
use crate::gaussian::{logit, param, rotation_matrix, Gaussian, GaussianCloud, ParamClass, ParamVec};
use crate::loss::combined_loss;
use crate::optim::{adam_update, exp_decay, AdamParams, Moments};
use crate::render::{render, render_backward, RenderOutput, RenderSettings, ShadingMode};
use crate::sh::{color_from_dc, dc_from_color};

/// Optimizer groups: the seven per-Gaussian classes followed by the environment map.
pub const NUM_GROUPS: usize = 8;
pub const ENV_GROUP: usize = 7;

pub fn group_name(g: usize) -> &'static str {
    if g == ENV_GROUP {
        "env"
    } else {
        ParamClass::ALL[g].name()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Bootstrap,
    Reflection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Completed optimizer steps.
    pub iteration: u64,
    pub stage: Stage,
    /// Per-Gaussian moments, `param::COUNT` entries per Gaussian.
    pub moments: Moments,
    pub env_moments: Moments,
    /// Update count per optimizer group (bias correction).
    pub group_steps: [u64; NUM_GROUPS],
    pub reflective_count: usize,
    pub best_count: usize,
    pub best_iter: u64,
    pub propagation_active: bool,
    pub sh_unlocked: bool,
    pub terminated_at: Option<u64>,
    pub rng: ChaCha8Rng,
    pub view_order: Vec<usize>,
    pub view_cursor: usize,
    pub grad_accum: Vec<f64>,
    pub grad_count: Vec<u64>,
}

impl TrainState {
    pub fn new(n_gaussians: usize, env_texels: usize, seed: u64) -> Self {
        Self {
            iteration: 0,
            stage: Stage::Bootstrap,
            moments: Moments::zeros(n_gaussians * param::COUNT),
            env_moments: Moments::zeros(env_texels * 3),
            group_steps: [0; NUM_GROUPS],
            reflective_count: 0,
            best_count: 0,
            best_iter: 0,
            propagation_active: true,
            sh_unlocked: false,
            terminated_at: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
            view_order: Vec::new(),
            view_cursor: 0,
            grad_accum: vec![0.0; n_gaussians],
            grad_count: vec![0; n_gaussians],
        }
    }

}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub iteration: u64,
    pub loss: f64,
    pub l1: f64,
    pub dssim: f64,
    pub n_gaussians: usize,
    pub n_reflective: usize,
    pub psnr_train: f64,
}

impl std::fmt::Display for StepStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "iter {}, loss {:.6}, l1 {:.6}, dssim {:.6}, n_gaussians {}, n_reflective {}, psnr_train {:.3}",
            self.iteration, self.loss, self.l1, self.dssim, self.n_gaussians, self.n_reflective, self.psnr_train
        )
    }
}

/// Which events fired on a step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Events {
    pub propagation: bool,
    pub clamp: bool,
    pub densify: bool,
    pub terminated: bool,
}

/// Random initial cloud: points uniform in a ball, random colors, isotropic
/// scales from the mean distance to the three nearest neighbours.
pub fn init_cloud(cfg: &TrainConfig, rng: &mut impl Rng) -> GaussianCloud {
    let n = cfg.init_points;
    let pts: Vec<[f64; 3]> = (0..n)
        .map(|_| loop {
            let p: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            if p.iter().map(|c| c * c).sum::<f64>() <= 1.0 {
                break p.map(|c| c * cfg.init_radius);
            }
        })
        .collect();
    let mut gaussians = Vec::with_capacity(n);
    for (i, p) in pts.iter().enumerate() {
        let mut best = [f64::INFINITY; 3];
        for (j, q) in pts.iter().enumerate() {
            if i == j {
                continue;
            }
            let d2: f64 = (0..3).map(|a| (p[a] - q[a]).powi(2)).sum();
            if d2 < best[2] {
                best[2] = d2;
                best.sort_by(f64::total_cmp);
            }
        }
        let finite: Vec<f64> = best.iter().copied().filter(|d| d.is_finite()).collect();
        let mean_d2 = if finite.is_empty() { 0.01 } else { finite.iter().sum::<f64>() / finite.len() as f64 };
        let s = mean_d2.max(1e-7).sqrt().ln();
        let mut g = Gaussian {
            position: *p,
            log_scale: [s; 3],
            ..Default::default()
        };
        g.set_opacity(cfg.init_opacity);
        g.sh[0] = std::array::from_fn(|_| dc_from_color(rng.gen_range(0.0..1.0)));
        gaussians.push(g);
    }
    let mut cloud = GaussianCloud::new(gaussians);
    cloud.domain = cfg.domain();
    cloud
}

/// Raise opacity to the floor (resetting its raw value and moments), raise r
/// to its floor where reflection is allowed, and enlarge the two longest axes
/// of reflective Gaussians.
pub fn normal_propagation_step(cloud: &mut GaussianCloud, moments: &mut Moments, cfg: &TrainConfig) {
    let factor = cfg.axis_scale_factor.ln();
    for i in 0..cloud.len() {
        let allowed = cloud.reflection_allowed(i);
        let g = &mut cloud.gaussians[i];
        if g.opacity() < cfg.opacity_floor {
            g.opacity_raw = logit(cfg.opacity_floor);
            if !moments.is_empty() {
                moments.reset(i * param::COUNT + param::OPACITY);
            }
        }
        if allowed && g.reflection_strength < cfg.r_floor {
            g.reflection_strength = cfg.r_floor;
        }
        if g.reflection_strength > cfg.reflective_threshold {
            let keep = g.shortest_axis();
            for a in 0..3 {
                if a != keep {
                    g.log_scale[a] += factor;
                }
            }
        }
    }
}

/// Multiply each base color channel of not-yet-reflective Gaussians by an
/// independent factor drawn from `1 ± amplitude`.
pub fn color_sabotage(cloud: &mut GaussianCloud, cfg: &TrainConfig, rng: &mut impl Rng) {
    let a = cfg.sabotage_amplitude;
    for g in &mut cloud.gaussians {
        if g.reflection_strength > cfg.reflective_threshold {
            continue;
        }
        for c in 0..3 {
            let f = if a > 0.0 { rng.gen_range(1.0 - a..=1.0 + a) } else { 1.0 };
            g.sh[0][c] = dc_from_color(color_from_dc(g.sh[0][c]) * f);
        }
    }
}

pub fn opacity_clamp_step(cloud: &mut GaussianCloud, cfg: &TrainConfig) {
    let raw = logit(cfg.opacity_clamp_value);
    for g in &mut cloud.gaussians {
        if g.opacity() > cfg.opacity_clamp_value {
            g.opacity_raw = raw;
        }
    }
}

/// Records the current reflective count and reports whether it has failed to
/// exceed its best for the patience window.
pub fn specular_termination_check(state: &mut TrainState, cfg: &TrainConfig) -> bool {
    let it = state.iteration;
    let start = cfg.termination_start();
    if state.stage != Stage::Reflection || it < start {
        return false;
    }
    if it == start || state.reflective_count > state.best_count {
        state.best_count = state.reflective_count.max(state.best_count);
        state.best_iter = it;
    }
    it - state.best_iter >= cfg.termination_patience_iters
}

pub fn enable_higher_sh(state: &mut TrainState) -> Result<()> {
    if state.terminated_at.is_none() {
        return Err(Error::Contract("higher-order SH requested before specular termination".into()));
    }
    state.sh_unlocked = true;
    state.propagation_active = false;
    Ok(())
}

/// Clone small and split large Gaussians with a high mean screen-space
/// gradient, then prune nearly transparent ones. Returns (clones, splits, pruned).
pub fn densify_and_prune(
    cloud: &mut GaussianCloud,
    state: &mut TrainState,
    cfg: &TrainConfig,
    extent: f64,
) -> (usize, usize, usize) {
    let n = cloud.len();
    let mut candidates: Vec<(f64, usize)> = (0..n)
        .filter(|&i| state.grad_count[i] > 0)
        .map(|i| (state.grad_accum[i] / state.grad_count[i] as f64, i))
        .filter(|(g, _)| *g >= cfg.densify_grad_threshold)
        .collect();
    let budget = cfg.max_gaussians.saturating_sub(n);
    if candidates.len() > budget {
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        candidates.truncate(budget);
        candidates.sort_by_key(|c| c.1);
    }
    let boundary = cfg.percent_dense * extent;
    let mut split = vec![false; n];
    let mut new: Vec<(Gaussian, Option<usize>)> = Vec::new();
    let (mut clones, mut splits) = (0, 0);
    for &(_, i) in &candidates {
        let g = cloud.gaussians[i].clone();
        let max_scale = g.scale().into_iter().fold(0.0, f64::max);
        if max_scale <= boundary {
            new.push((g, Some(i)));
            clones += 1;
        } else {
            split[i] = true;
            splits += 1;
            let r = rotation_matrix(&g.rotation);
            let s = g.scale();
            for _ in 0..2 {
                let z: [f64; 3] = std::array::from_fn(|a| { let z: f64 = StandardNormal.sample(&mut state.rng); s[a] * z });
                let mut child = g.clone();
                for a in 0..3 {
                    child.position[a] += (0..3).map(|b| r[(a, b)] * z[b]).sum::<f64>();
                    child.log_scale[a] -= 1.6f64.ln();
                }
                new.push((child, None));
            }
        }
    }
    let old_m = std::mem::take(&mut state.moments);
    let mut gaussians = Vec::with_capacity(n + new.len());
    let mut moments = Moments::default();
    let mut pruned = 0;
    let push = |g: Gaussian, from: Option<usize>, gaussians: &mut Vec<Gaussian>, moments: &mut Moments| {
        gaussians.push(g);
        match from {
            Some(j) => {
                let r = j * param::COUNT..(j + 1) * param::COUNT;
                moments.m.extend_from_slice(&old_m.m[r.clone()]);
                moments.v.extend_from_slice(&old_m.v[r]);
            }
            None => {
                moments.m.extend([0.0; param::COUNT]);
                moments.v.extend([0.0; param::COUNT]);
            }
        }
    };
    for (i, g) in cloud.gaussians.drain(..).enumerate() {
        if split[i] {
            continue;
        }
        if g.opacity() < cfg.prune_opacity {
            pruned += 1;
            continue;
        }
        push(g, Some(i), &mut gaussians, &mut moments);
    }
    for (g, _) in new {
        if g.opacity() < cfg.prune_opacity {
            pruned += 1;
            continue;
        }
        push(g, None, &mut gaussians, &mut moments);
    }
    cloud.gaussians = gaussians;
    let len = cloud.len();
    for i in 0..len {
        if !cloud.reflection_allowed(i) {
            cloud.gaussians[i].reflection_strength = 0.0;
        }
    }
    state.moments = moments;
    state.grad_accum = vec![0.0; len];
    state.grad_count = vec![0; len];
    (clones, splits, pruned)
}

/// Step-size and gating per optimizer group for the current stage.
fn group_rates(cfg: &TrainConfig, state: &TrainState, position_scale: f64) -> [f64; NUM_GROUPS] {
    let reflection = state.stage == Stage::Reflection && cfg.reflection_enabled;
    let mut lr = [0.0; NUM_GROUPS];
    lr[ParamClass::Position as usize] = exp_decay(
        cfg.lr_position * position_scale,
        cfg.lr_position_final * position_scale,
        state.iteration,
        cfg.total_iters,
    );
    lr[ParamClass::Rotation as usize] = cfg.lr_rotation;
    lr[ParamClass::Scale as usize] = cfg.lr_scale;
    lr[ParamClass::Opacity as usize] = cfg.lr_opacity;
    lr[ParamClass::ShDc as usize] = cfg.lr_sh;
    lr[ParamClass::ShRest as usize] = if state.sh_unlocked { cfg.lr_sh_rest } else { 0.0 };
    lr[ParamClass::Reflection as usize] = if reflection { cfg.lr_reflection } else { 0.0 };
    lr[ENV_GROUP] = if reflection { cfg.lr_env } else { 0.0 };
    lr
}

fn group_active(lr: &[f64; NUM_GROUPS], g: usize, state: &TrainState) -> bool {
    match g {
        x if x == ParamClass::ShRest as usize => state.sh_unlocked,
        x if x == ParamClass::Reflection as usize || x == ENV_GROUP => lr[g] > 0.0,
        _ => true,
    }
}

pub struct Trainer<'a> {
    pub cfg: TrainConfig,
    pub cloud: GaussianCloud,
    pub env: EnvironmentMap,
    pub state: TrainState,
    pub dataset: &'a Dataset,
    pub adam: AdamParams,
    /// `(iteration, n_reflective)` sampled every step in the reflection stage.
    pub reflective_history: Vec<(u64, usize)>,
    train_views: Vec<usize>,
    extent: f64,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: TrainConfig, dataset: &'a Dataset) -> Result<Self> {
        cfg.validate()?;
        let train_views: Vec<usize> = (0..dataset.views.len())
            .filter(|&i| dataset.views[i].split == crate::dataset::Split::Train)
            .collect();
        if train_views.is_empty() {
            return Err(Error::InvalidArgument("dataset has no training views".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let cloud = init_cloud(&cfg, &mut rng);
        let env = EnvironmentMap::constant(cfg.env_height, [cfg.env_init; 3]);
        let mut state = TrainState::new(cloud.len(), env.texels.len(), cfg.seed);
        state.rng = rng;
        Ok(Self::resume(cfg, dataset, cloud, env, state))
    }

    /// Continue from saved parts (a loaded checkpoint).
    pub fn resume(
        cfg: TrainConfig,
        dataset: &'a Dataset,
        mut cloud: GaussianCloud,
        env: EnvironmentMap,
        state: TrainState,
    ) -> Self {
        let train_views = (0..dataset.views.len())
            .filter(|&i| dataset.views[i].split == crate::dataset::Split::Train)
            .collect();
        cloud.domain = cfg.domain();
        Self {
            extent: dataset.camera_extent(),
            cfg,
            cloud,
            env,
            state,
            dataset,
            adam: AdamParams::default(),
            reflective_history: Vec::new(),
            train_views,
        }
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn position_scale(&self) -> f64 {
        if self.cfg.lr_position_scale > 0.0 {
            self.cfg.lr_position_scale
        } else {
            self.extent
        }
    }

    pub fn render_settings(&self) -> RenderSettings {
        render_settings_for(&self.cfg, &self.state, self.dataset.background)
    }

    /// Everything a checkpoint needs, cloned out of the trainer.
    pub fn checkpoint(&self) -> crate::io::checkpoint::Checkpoint {
        crate::io::checkpoint::Checkpoint {
            config: self.cfg.clone(),
            cloud: self.cloud.clone(),
            env: self.env.clone(),
            state: self.state.clone(),
            reflective_history: self.reflective_history.clone(),
        }
    }

    pub fn render_view(&self, view: &View) -> Result<RenderOutput> {
        render(&self.cloud, &self.env, &view.camera, &self.render_settings())
    }

    fn next_view(&mut self) -> usize {
        if self.state.view_cursor >= self.state.view_order.len() {
            let mut order = self.train_views.clone();
            order.shuffle(&mut self.state.rng);
            self.state.view_order = order;
            self.state.view_cursor = 0;
        }
        let v = self.state.view_order[self.state.view_cursor];
        self.state.view_cursor += 1;
        v
    }

    pub fn is_done(&self) -> bool {
        self.state.iteration >= self.cfg.total_iters
    }

    /// One forward/backward/update, followed by whatever scheduled events fire.
    pub fn train_step(&mut self) -> Result<(StepStats, Events)> {
        let view_idx = self.next_view();
        let view = &self.dataset.views[view_idx];
        let out = self.render_view(view)?;
        let loss = combined_loss(out.image(), &view.image, self.cfg.lambda)?;
        let grads = render_backward(&self.cloud, &self.env, &view.camera, &out, &loss.grad)?;
        let it = self.state.iteration + 1;
        check_finite(&grads.gaussians, &grads.env, it)?;

        if it <= self.cfg.densify_until {
            for (i, g) in grads.mean2d_norm.iter().enumerate() {
                if let Some(g) = g {
                    self.state.grad_accum[i] += g;
                    self.state.grad_count[i] += 1;
                }
            }
        }
        self.apply_update(&grads.gaussians, &grads.env);
        self.state.iteration = it;
        let events = self.run_schedule()?;

        let mse = out
            .image()
            .data
            .iter()
            .zip(&view.image.data)
            .flat_map(|(a, b)| (0..3).map(move |c| (a[c] - b[c]).powi(2)))
            .sum::<f64>()
            / view.image.num_samples() as f64;
        let stats = StepStats {
            iteration: it,
            loss: loss.total,
            l1: loss.l1,
            dssim: loss.dssim,
            n_gaussians: self.cloud.len(),
            n_reflective: self.state.reflective_count,
            psnr_train: crate::metrics::psnr_from_mse(mse),
        };
        if self.cfg.log_interval > 0 && it % self.cfg.log_interval == 0 {
            log::info!("{stats}");
        }
        Ok((stats, events))
    }

    fn apply_update(&mut self, g_gauss: &[ParamVec], g_env: &[[f64; 3]]) {
        let lr = group_rates(&self.cfg, &self.state, self.position_scale());
        let active: [bool; NUM_GROUPS] = std::array::from_fn(|g| group_active(&lr, g, &self.state));
        for (g, a) in active.iter().enumerate() {
            if *a {
                self.state.group_steps[g] += 1;
            }
        }
        let steps = self.state.group_steps;
        for (i, grad) in g_gauss.iter().enumerate() {
            let allowed = self.cloud.reflection_allowed(i);
            let mut p = self.cloud.gaussians[i].to_params();
            for class in ParamClass::ALL {
                let gi = class as usize;
                if !active[gi] || (class == ParamClass::Reflection && !allowed) {
                    continue;
                }
                for k in class.range() {
                    adam_update(
                        &self.adam,
                        &mut self.state.moments,
                        i * param::COUNT + k,
                        &mut p[k],
                        grad[k],
                        lr[gi],
                        steps[gi],
                    );
                }
            }
            self.cloud.gaussians[i].set_params(&p);
        }
        if active[ENV_GROUP] {
            for (t, grad) in g_env.iter().enumerate() {
                for c in 0..3 {
                    adam_update(
                        &self.adam,
                        &mut self.state.env_moments,
                        t * 3 + c,
                        &mut self.env.texels[t][c],
                        grad[c],
                        lr[ENV_GROUP],
                        steps[ENV_GROUP],
                    );
                }
            }
        }
        self.enforce_constraints();
    }

    /// Unit quaternions, r in [0, 1] (0 outside M or when reflections are off), texels >= 0.
    fn enforce_constraints(&mut self) {
        let reflection = self.cfg.reflection_enabled;
        for i in 0..self.cloud.len() {
            let allowed = reflection && self.cloud.reflection_allowed(i);
            let g = &mut self.cloud.gaussians[i];
            g.normalize_rotation();
            g.reflection_strength = if allowed { g.reflection_strength.clamp(0.0, 1.0) } else { 0.0 };
        }
        self.env.clamp_nonnegative();
    }

    fn run_schedule(&mut self) -> Result<Events> {
        let it = self.state.iteration;
        let cfg = &self.cfg;
        let mut ev = Events::default();
        if self.state.stage == Stage::Bootstrap && it >= cfg.bootstrap_iters {
            self.state.stage = Stage::Reflection;
        }
        let prop = self.state.stage == Stage::Reflection
            && self.state.propagation_active
            && cfg.reflection_enabled
            && cfg.propagation_enabled
            && cfg.propagation_fires(it);
        let clamp = cfg.clamp_fires(it);
        if prop && clamp {
            return Err(Error::Contract(format!("propagation and opacity clamp both fire on iteration {it}")));
        }
        if self.cfg.densify_fires(it) {
            let cfg = self.cfg.clone();
            densify_and_prune(&mut self.cloud, &mut self.state, &cfg, self.extent);
            ev.densify = true;
        }
        if prop {
            normal_propagation_step(&mut self.cloud, &mut self.state.moments, &self.cfg);
            if self.cfg.sabotage_enabled {
                color_sabotage(&mut self.cloud, &self.cfg, &mut self.state.rng);
            }
            ev.propagation = true;
        }
        if clamp {
            opacity_clamp_step(&mut self.cloud, &self.cfg);
            ev.clamp = true;
        }
        if self.state.stage == Stage::Reflection {
            self.state.reflective_count = self.cloud.reflective_count(self.cfg.reflective_threshold);
            self.reflective_history.push((it, self.state.reflective_count));
            if self.state.terminated_at.is_none() && specular_termination_check(&mut self.state, &self.cfg) {
                self.state.terminated_at = Some(it);
                enable_higher_sh(&mut self.state)?;
                log::info!("specular termination at iteration {it}, reflective count {}", self.state.best_count);
                ev.terminated = true;
            }
        }
        Ok(ev)
    }

    /// Runs steps until the bootstrap stage is over.
    pub fn bootstrap_stage(&mut self) -> Result<()> {
        while self.state.stage == Stage::Bootstrap && !self.is_done() {
            self.train_step()?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        while !self.is_done() {
            self.train_step()?;
        }
        Ok(())
    }
}

/// Settings matching the training stage: degree-0 color until higher orders unlock.
pub fn render_settings_for(cfg: &TrainConfig, state: &TrainState, background: [f64; 3]) -> RenderSettings {
    RenderSettings {
        sh_degree: if state.sh_unlocked { cfg.sh_degree_max } else { 0 },
        background,
        mode: if cfg.deferred_mode { ShadingMode::Deferred } else { ShadingMode::Forward },
    }
}

fn check_finite(g: &[ParamVec], env: &[[f64; 3]], iteration: u64) -> Result<()> {
    for p in g {
        for (k, v) in p.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteGradient {
                    group: ParamClass::of_index(k).name(),
                    iteration,
                });
            }
        }
    }
    if env.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient { group: "env", iteration });
    }
    Ok(())
}
