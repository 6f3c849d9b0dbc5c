//! Helpers shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use avwake::corpus::{CorpusConfig, FeatureOptions, FeatureSet, GeneratedSplit, Snr, Split};
use avwake::features::{FbankConfig, FbankExtractor};
use avwake::models::{bce_loss, Modality, ModelInput, Topology, WwsModel};
use avwake::nn::{Bindings, LayerType, ParamRegistry, ParamRole};
use avwake::tensor::{Coords, GradCheck, GradCheckReport, Graph, Tensor, Var};
use avwake::Result;

pub const LAYER_EPS: f64 = 5e-5;
pub const LAYER_FLOOR: f64 = 1e-6;
pub const MODEL_EPS: f64 = 3e-4;
pub const MODEL_FLOOR: f64 = 1e-8;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// `sum(y * r)` for a fixed random `r`, so every output coordinate carries
/// an O(1) weight into the scalar under test.
pub fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let r = random_tensor(&mut rng(seed ^ 0x5EED), &shape, 1.0);
    let r = g.constant(r)?;
    let p = g.mul(y, r)?;
    g.sum(p)
}

/// Registers `x` as a differentiable input called `input`.
pub fn with_input(reg: &mut ParamRegistry, x: Tensor) {
    reg.insert("input", x, LayerType::Fc, ParamRole::Bias)
        .expect("fresh name");
}

/// Finite-difference check over every coordinate of `reg`, the output of
/// `forward` projected to a scalar.
pub fn check_all<F>(reg: &ParamRegistry, seed: u64, forward: F) -> GradCheckReport
where
    F: Fn(&mut Graph, &Bindings) -> Result<Var>,
{
    GradCheck::new(LAYER_EPS, Coords::All)
        .floor(LAYER_FLOOR)
        .run(
            |p, g| {
                let b = p.bind(g)?;
                let y = forward(g, &b)?;
                project(g, y, seed)
            },
            reg,
        )
        .expect("gradient check runs")
}

pub fn small_corpus(seed: u64, train: usize, dev: usize, test: usize) -> CorpusConfig {
    CorpusConfig::with_counts(seed, train, dev, test)
}

/// Normalized features of one generated split.
pub fn features(cfg: &CorpusConfig, split: Split, modality: Modality) -> FeatureSet {
    let fx = FbankExtractor::new(FbankConfig::default()).expect("default fbank");
    let opts = FeatureOptions {
        audio: true,
        lips: modality.uses_video(),
        lip_pool: Topology::default().encoder.input_pool,
    };
    let mut fs = FeatureSet::extract(&GeneratedSplit::new(cfg, split), &fx, opts).expect("extract");
    let stats = fs.fbank_stats().expect("stats");
    fs.normalize(&stats).expect("normalize");
    fs
}

/// Random model input of the default topology for `n` clips.
pub fn random_input(modality: Modality, n: usize, seed: u64) -> ModelInput {
    let t = Topology::default();
    let mut r = rng(seed);
    let side = avwake::features::LIP_SIZE;
    ModelInput {
        audio: modality
            .uses_audio()
            .then(|| random_tensor(&mut r, &[n, t.audio_frames, t.n_mels], 1.0)),
        lips: modality
            .uses_video()
            .then(|| random_tensor(&mut r, &[n, t.video_frames, 1, side, side], 0.5)),
    }
}

/// Full-model gradient check of the mean BCE loss on `count` sampled
/// parameter coordinates.
pub fn model_gradcheck(modality: Modality, seed: u64, count: usize) -> GradCheckReport {
    let model = WwsModel::new(modality, Topology::default(), seed).expect("model");
    let n = 2;
    let input = random_input(modality, n, seed + 1);
    let labels: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
    GradCheck::new(MODEL_EPS, Coords::Sample { count, seed })
        .floor(MODEL_FLOOR)
        .run(
            |p, g| {
                let b = p.bind(g)?;
                let s = model.forward(g, &b, &input)?;
                bce_loss(g, s, &labels)
            },
            &model.registry,
        )
        .expect("gradient check runs")
}

pub fn snr_grid() -> Vec<Snr> {
    vec![Snr::Db(-5), Snr::Db(0), Snr::Db(5)]
}
