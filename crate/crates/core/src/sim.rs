//! Synthetic scenes for exercising the adaptation loop without a detector.
//!
//! A world fixes class prototypes, a prompt pool and a per-class shift
//! direction. Scenes place objects on a canvas and emit jittered proposal
//! boxes around each; a proposal's feature mixes the (shifted) prototype of
//! its class with noise, weighted by how well the box fits the object.
//! Some objects get a small cluster of wrong-class proposals next to them,
//! and every scene carries pure-noise background proposals.

use ndarray::{Array1, Array2, Array3, ArrayView1};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::scene::{GroundTruth, ProposalSet};
use crate::scoring::PromptPool;

/// Lower bound of the feature mixing weight, reached at zero IoU.
pub const ALPHA_FLOOR: f64 = 0.2;

/// Multiplier applied to the scene seed: scene `i` of a suite uses
/// `base_seed * SUITE_SEED_STRIDE + i`.
pub const SUITE_SEED_STRIDE: u64 = 1_000_003;

const WORLD_STREAM: u64 = 1;
const SCENE_STREAM: u64 = 2;
const MIN_BOX_SIDE: f64 = 2.0;

/// A ChaCha8 generator on an independent stream of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixing weight of the prototype for a proposal with the given IoU.
pub fn alpha_for_iou(iou: f64) -> f64 {
    ALPHA_FLOOR + (1.0 - ALPHA_FLOOR) * iou.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dim: usize,
    pub num_classes: usize,
    pub prompts_per_class: usize,
    pub image_width: f64,
    pub image_height: f64,
    /// Inclusive range of objects per scene.
    pub objects_per_scene: [usize; 2],
    /// Inclusive range of proposals emitted per object.
    pub proposals_per_object: [usize; 2],
    /// Range of object side lengths in pixels.
    pub object_size: [f64; 2],
    /// Probability that an object gets a neighbouring wrong-class cluster.
    pub distractor_prob: f64,
    /// Inclusive range of proposals in a distractor cluster.
    pub distractor_size: [usize; 2],
    /// Scale applied to the mixing weight of distractor proposals.
    pub distractor_alpha: f64,
    pub background_proposals: usize,
    /// Largest per-coordinate jitter standard deviation, as a fraction of the
    /// box side.
    pub jitter: f64,
    /// Scale of the noise mixed into proposal features.
    pub feature_noise: f64,
    /// Largest prompt perturbation magnitude.
    pub prompt_quality_spread: f64,
    /// Prompts per class perturbed along the shift direction.
    pub aligned_prompts: usize,
    /// Weight of the direction shared by all classes in each class's shift
    /// direction; the rest is class-specific.
    pub shift_coherence: f64,
}

impl Default for SimConfig {
    /// The "desk-small" profile.
    fn default() -> Self {
        Self {
            dim: 32,
            num_classes: 6,
            prompts_per_class: 16,
            image_width: 640.0,
            image_height: 480.0,
            objects_per_scene: [2, 5],
            proposals_per_object: [20, 60],
            object_size: [48.0, 192.0],
            distractor_prob: 0.1,
            distractor_size: [5, 15],
            distractor_alpha: 0.6,
            background_proposals: 40,
            jitter: 0.25,
            feature_noise: 1.0,
            prompt_quality_spread: 1.0,
            aligned_prompts: 4,
            shift_coherence: 0.5,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.dim < 2 || self.num_classes < 2 || self.prompts_per_class == 0 {
            return bad("need dim >= 2, at least two classes and one prompt per class".into());
        }
        if self.dim < 64 && (self.num_classes as u64) > (1u64 << self.dim) {
            return bad(format!("{} classes do not fit in dimension {}", self.num_classes, self.dim));
        }
        if !(self.image_width > 0.0 && self.image_height > 0.0) {
            return bad("image extent must be positive".into());
        }
        for (name, [lo, hi]) in [
            ("objects_per_scene", self.objects_per_scene),
            ("proposals_per_object", self.proposals_per_object),
            ("distractor_size", self.distractor_size),
        ] {
            if lo > hi {
                return bad(format!("{name}: lower bound {lo} above upper bound {hi}"));
            }
        }
        if self.objects_per_scene[0] == 0 || self.proposals_per_object[0] == 0 {
            return bad("every scene needs an object and every object a proposal".into());
        }
        let [smin, smax] = self.object_size;
        if !(smin >= 2.0 * MIN_BOX_SIDE && smin <= smax && smax <= self.image_width.min(self.image_height)) {
            return bad(format!("object_size [{smin}, {smax}] does not fit the image"));
        }
        for (name, v) in [
            ("distractor_prob", self.distractor_prob),
            ("distractor_alpha", self.distractor_alpha),
            ("shift_coherence", self.shift_coherence),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} outside [0, 1]"));
            }
        }
        for (name, v) in [
            ("jitter", self.jitter),
            ("feature_noise", self.feature_noise),
            ("prompt_quality_spread", self.prompt_quality_spread),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be finite and non-negative"));
            }
        }
        if self.aligned_prompts > self.prompts_per_class {
            return bad(format!(
                "{} aligned prompts but only {} prompts per class",
                self.aligned_prompts, self.prompts_per_class
            ));
        }
        Ok(())
    }
}

/// Domain shift applied to scene features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftSpec {
    /// In `[0, 1]`; prototypes rotate by `magnitude * pi/2` toward the world's
    /// shift direction.
    pub magnitude: f64,
    /// Feature noise is scaled by `1 + noise_amplification * magnitude`.
    pub noise_amplification: f64,
    /// Length of the mean offset, along the world's noise direction, that the
    /// shifted domain adds to every noise draw, per unit of magnitude.
    pub noise_bias: f64,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        Self { magnitude: 0.5, noise_amplification: 1.0, noise_bias: 1.0 }
    }
}

impl ShiftSpec {
    pub fn none() -> Self {
        Self { magnitude: 0.0, noise_amplification: 0.0, noise_bias: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.magnitude) {
            return Err(Error::InvalidConfig(format!("shift magnitude {} outside [0, 1]", self.magnitude)));
        }
        for (name, v) in [("noise_amplification", self.noise_amplification), ("noise_bias", self.noise_bias)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and non-negative")));
            }
        }
        Ok(())
    }

    fn angle(&self) -> f64 {
        self.magnitude * std::f64::consts::FRAC_PI_2
    }

    fn noise_scale(&self) -> f64 {
        1.0 + self.noise_amplification * self.magnitude
    }

    fn noise_offset(&self) -> f64 {
        self.noise_bias * self.magnitude
    }
}

/// Class prototypes, prompt pool and shift directions shared by a suite.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    /// `K x d` unit rows; also the base class embeddings.
    pub prototypes: Array2<f64>,
    /// `K x d` unit rows orthogonal to the matching prototype.
    pub shift_directions: Array2<f64>,
    /// Unit direction of the mean of shifted-domain noise.
    pub noise_direction: Array1<f64>,
    pub pool: PromptPool,
    /// Per class, the prompt indices perturbed along the shift direction.
    pub aligned: Vec<Vec<usize>>,
}

impl World {
    /// Prototypes rotated toward the shift directions.
    pub fn shifted_prototypes(&self, shift: &ShiftSpec) -> Array2<f64> {
        if shift.magnitude == 0.0 {
            return self.prototypes.clone();
        }
        let (c, s) = (shift.angle().cos(), shift.angle().sin());
        &self.prototypes * c + &self.shift_directions * s
    }
}

fn gaussian_vector(rng: &mut ChaCha8Rng, dim: usize) -> Array1<f64> {
    Array1::from_shape_simple_fn(dim, || StandardNormal.sample(rng))
}

fn unit(v: Array1<f64>) -> Array1<f64> {
    let n = v.dot(&v).sqrt();
    v / n
}

/// Component of `v` orthogonal to the unit vector `u`, normalized.
fn orthogonal_unit(v: &Array1<f64>, u: ArrayView1<'_, f64>) -> Array1<f64> {
    let along = v.dot(&u);
    unit(v - &(&u * along))
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Array1<f64> {
    loop {
        let v = gaussian_vector(rng, dim);
        if v.dot(&v) > 1e-12 {
            return unit(v);
        }
    }
}

pub fn gen_world(seed: u64, cfg: &SimConfig) -> Result<World> {
    cfg.validate()?;
    let (k, t, d) = (cfg.num_classes, cfg.prompts_per_class, cfg.dim);
    let mut rng = stream_rng(seed, WORLD_STREAM);

    let mut prototypes = Array2::zeros((k, d));
    for mut row in prototypes.rows_mut() {
        row.assign(&random_unit(&mut rng, d));
    }
    let shared = random_unit(&mut rng, d);
    let mut shift_directions = Array2::zeros((k, d));
    for (c, mut row) in shift_directions.rows_mut().into_iter().enumerate() {
        let own = random_unit(&mut rng, d);
        let mix = &shared * cfg.shift_coherence + &own * (1.0 - cfg.shift_coherence);
        row.assign(&orthogonal_unit(&mix, prototypes.row(c)));
    }

    let mut embeddings = Array3::zeros((k, t, d));
    let mut aligned = Vec::with_capacity(k);
    for c in 0..k {
        let proto = prototypes.row(c);
        let mut order: Vec<usize> = (0..t).collect();
        order.shuffle(&mut rng);
        let mut chosen = order[..cfg.aligned_prompts].to_vec();
        chosen.sort_unstable();
        for p in 0..t {
            // magnitudes in (0, spread]
            let q = cfg.prompt_quality_spread * rng.random_range(0.25..=1.0);
            let direction = if chosen.binary_search(&p).is_ok() {
                shift_directions.row(c).to_owned()
            } else {
                orthogonal_unit(&random_unit(&mut rng, d), proto)
            };
            let e = if q == 0.0 { proto.to_owned() } else { unit(&proto + &(direction * q)) };
            embeddings.slice_mut(ndarray::s![c, p, ..]).assign(&e);
        }
        aligned.push(chosen);
    }
    let noise_direction = random_unit(&mut rng, d);
    Ok(World { prototypes, shift_directions, noise_direction, pool: PromptPool::new(embeddings)?, aligned })
}

/// Where a proposal came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalOrigin {
    /// Jittered around ground-truth object `index`.
    Object {
        index: usize,
    },
    /// Wrong-class cluster next to object `index`.
    Distractor {
        index: usize,
        class_id: usize,
    },
    Background,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub width: f64,
    pub height: f64,
    pub objects: Vec<GroundTruth>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedScene {
    pub scene: Scene,
    pub proposals: ProposalSet,
    pub origins: Vec<ProposalOrigin>,
}

impl GeneratedScene {
    pub fn ground_truth(&self) -> &[GroundTruth] {
        &self.scene.objects
    }
}

struct FeatureMixer<'a> {
    shifted: &'a Array2<f64>,
    noise: f64,
    /// Mean of the noise draws; `None` in the unshifted domain.
    offset: Option<Array1<f64>>,
    dim: usize,
}

impl FeatureMixer<'_> {
    /// A noise draw with unit expected squared length plus the domain offset.
    fn noise(&self, rng: &mut ChaCha8Rng) -> Array1<f64> {
        let xi = gaussian_vector(rng, self.dim) / (self.dim as f64).sqrt();
        match &self.offset {
            Some(mean) => xi + mean,
            None => xi,
        }
    }

    fn mix(&self, rng: &mut ChaCha8Rng, class: usize, alpha: f64) -> Array1<f64> {
        let v = &self.shifted.row(class) * alpha + &(self.noise(rng) * ((1.0 - alpha) * self.noise));
        unit(v)
    }

    fn background(&self, rng: &mut ChaCha8Rng) -> Array1<f64> {
        loop {
            let v = self.noise(rng);
            if v.dot(&v) > 1e-12 {
                return unit(v);
            }
        }
    }
}

fn clip_box(x1: f64, y1: f64, x2: f64, y2: f64, w: f64, h: f64) -> BBox {
    let (mut x1, mut x2) = (x1.min(x2).clamp(0.0, w), x1.max(x2).clamp(0.0, w));
    let (mut y1, mut y2) = (y1.min(y2).clamp(0.0, h), y1.max(y2).clamp(0.0, h));
    if x2 - x1 < MIN_BOX_SIDE {
        let c = ((x1 + x2) / 2.0).clamp(MIN_BOX_SIDE / 2.0, w - MIN_BOX_SIDE / 2.0);
        (x1, x2) = (c - MIN_BOX_SIDE / 2.0, c + MIN_BOX_SIDE / 2.0);
    }
    if y2 - y1 < MIN_BOX_SIDE {
        let c = ((y1 + y2) / 2.0).clamp(MIN_BOX_SIDE / 2.0, h - MIN_BOX_SIDE / 2.0);
        (y1, y2) = (c - MIN_BOX_SIDE / 2.0, c + MIN_BOX_SIDE / 2.0);
    }
    BBox::new(x1, y1, x2, y2).expect("clipped box is valid")
}

fn jittered(rng: &mut ChaCha8Rng, b: &BBox, jitter: f64, w: f64, h: f64) -> BBox {
    let level = jitter * rng.random::<f64>();
    let (bw, bh) = (b.width(), b.height());
    let mut n = || -> f64 { StandardNormal.sample(rng) };
    clip_box(
        b.x1() + n() * level * bw,
        b.y1() + n() * level * bh,
        b.x2() + n() * level * bw,
        b.y2() + n() * level * bh,
        w,
        h,
    )
}

pub fn gen_scene_proposals(seed: u64, cfg: &SimConfig, world: &World, shift: &ShiftSpec) -> Result<GeneratedScene> {
    cfg.validate()?;
    shift.validate()?;
    if world.prototypes.dim() != (cfg.num_classes, cfg.dim) {
        return Err(Error::ShapeMismatch("world does not match the simulator configuration".into()));
    }
    let (w, h, d) = (cfg.image_width, cfg.image_height, cfg.dim);
    let mut rng = stream_rng(seed, SCENE_STREAM);
    let shifted = world.shifted_prototypes(shift);
    let offset = (shift.noise_offset() > 0.0).then(|| &world.noise_direction * shift.noise_offset());
    let mixer = FeatureMixer { shifted: &shifted, noise: cfg.feature_noise * shift.noise_scale(), offset, dim: d };

    let n_objects = rng.random_range(cfg.objects_per_scene[0]..=cfg.objects_per_scene[1]);
    let mut objects = Vec::with_capacity(n_objects);
    for _ in 0..n_objects {
        let class_id = rng.random_range(0..cfg.num_classes);
        let bw = rng.random_range(cfg.object_size[0]..=cfg.object_size[1]);
        let bh = rng.random_range(cfg.object_size[0]..=cfg.object_size[1]);
        let x1 = rng.random_range(0.0..=w - bw);
        let y1 = rng.random_range(0.0..=h - bh);
        objects.push(GroundTruth { bbox: BBox::new(x1, y1, x1 + bw, y1 + bh)?, class_id });
    }

    let mut boxes = Vec::new();
    let mut rows: Vec<Array1<f64>> = Vec::new();
    let mut origins = Vec::new();
    for (index, obj) in objects.iter().enumerate() {
        let n = rng.random_range(cfg.proposals_per_object[0]..=cfg.proposals_per_object[1]);
        for _ in 0..n {
            let b = jittered(&mut rng, &obj.bbox, cfg.jitter, w, h);
            let alpha = alpha_for_iou(b.iou(&obj.bbox));
            rows.push(mixer.mix(&mut rng, obj.class_id, alpha));
            boxes.push(b);
            origins.push(ProposalOrigin::Object { index });
        }
        if rng.random::<f64>() < cfg.distractor_prob {
            let class_id = (obj.class_id + rng.random_range(1..cfg.num_classes)) % cfg.num_classes;
            let scale = rng.random_range(0.6..=1.0);
            let (dw, dh) = (obj.bbox.width() * scale, obj.bbox.height() * scale);
            let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let (cx, cy) = obj.bbox.center();
            let cx = cx + side * rng.random_range(0.5..=0.9) * obj.bbox.width();
            let cy = cy + rng.random_range(-0.3..=0.3) * obj.bbox.height();
            let anchor = clip_box(cx - dw / 2.0, cy - dh / 2.0, cx + dw / 2.0, cy + dh / 2.0, w, h);
            let n = rng.random_range(cfg.distractor_size[0]..=cfg.distractor_size[1]);
            for _ in 0..n {
                let b = jittered(&mut rng, &anchor, cfg.jitter, w, h);
                let alpha = cfg.distractor_alpha * alpha_for_iou(b.iou(&anchor));
                rows.push(mixer.mix(&mut rng, class_id, alpha));
                boxes.push(b);
                origins.push(ProposalOrigin::Distractor { index, class_id });
            }
        }
    }
    for _ in 0..cfg.background_proposals {
        let bw = rng.random_range(16.0..=0.4 * w);
        let bh = rng.random_range(16.0..=0.4 * h);
        let x1 = rng.random_range(0.0..=w - bw);
        let y1 = rng.random_range(0.0..=h - bh);
        boxes.push(BBox::new(x1, y1, x1 + bw, y1 + bh)?);
        rows.push(mixer.background(&mut rng));
        origins.push(ProposalOrigin::Background);
    }

    let mut features = Array2::zeros((rows.len(), d));
    for (mut dst, src) in features.rows_mut().into_iter().zip(&rows) {
        dst.assign(src);
    }
    let proposals = ProposalSet::new(boxes, features, world.prototypes.clone())?;
    Ok(GeneratedScene { scene: Scene { width: w, height: h, objects }, proposals, origins })
}

pub fn scene_seed(base_seed: u64, index: usize) -> u64 {
    base_seed.wrapping_mul(SUITE_SEED_STRIDE).wrapping_add(index as u64)
}

/// A world and the scenes generated in it.
#[derive(Debug, Clone, PartialEq)]
pub struct Suite {
    pub world: World,
    pub scenes: Vec<GeneratedScene>,
}

/// World seeded by `base_seed`; scene `i` seeded by [`scene_seed`].
pub fn make_suite(base_seed: u64, n_scenes: usize, cfg: &SimConfig, shift: &ShiftSpec) -> Result<Suite> {
    if n_scenes == 0 {
        return Err(Error::InvalidConfig("a suite needs at least one scene".into()));
    }
    let world = gen_world(base_seed, cfg)?;
    let scenes = (0..n_scenes)
        .map(|i| gen_scene_proposals(scene_seed(base_seed, i), cfg, &world, shift))
        .collect::<Result<_>>()?;
    Ok(Suite { world, scenes })
}
