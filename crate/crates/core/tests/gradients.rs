//! Finite-difference checks through the coordinate encoder, the alignment
//! projector and the whole sequence model.

mod common;

use geopoi_autodiff::gradcheck::check_params;
use geopoi_autodiff::{Graph, ParamStore, Tensor, TensorError, Var};
use geopoi_core::config::GcimConfig;
use geopoi_core::gcim::{fourier_features, Gcim};
use geopoi_core::ingest::Part;
use geopoi_core::pam::Pam;
use geopoi_core::recommender::{Ablation, TrainedModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn wrap<T>(r: geopoi_core::Result<T>) -> geopoi_autodiff::Result<T> {
    r.map_err(|e| TensorError::Invalid(e.to_string()))
}

fn weigh(g: &mut Graph, out: Var, seed: u64) -> geopoi_autodiff::Result<Var> {
    let shape = g.shape(out).to_vec();
    let w = g.constant(Tensor::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)));
    let p = g.mul(out, w)?;
    Ok(g.sum(p))
}

fn assert_passes<F>(store: &ParamStore, f: F)
where
    F: Fn(&mut Graph, &ParamStore) -> geopoi_autodiff::Result<Var>,
{
    let report = check_params(store, STEP, 48, f).unwrap();
    assert!(!report.tensors.is_empty());
    let worst = report.worst().unwrap();
    assert!(worst.rel_error < TOL, "{} rel error {:.3e}", worst.name, worst.rel_error);
}

#[test]
fn fourier_features_wrt_frequencies() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    store.insert("w_s", Tensor::randn(vec![4, 25], 0.3, &mut rng));
    let digits: Vec<f64> = (0..50).map(|i| ((i * 7) % 4) as f64).collect();
    assert_passes(&store, |g, s| {
        let w = g.param(s, "w_s")?;
        let d = g.constant(Tensor::matrix(2, 25, digits.clone())?);
        let f = wrap(fourier_features(g, d, w))?;
        weigh(g, f, 2)
    });
}

#[test]
fn gcim_every_parameter_group() {
    let gcim = Gcim::new(GcimConfig {
        level: 12,
        ngram: 3,
        gram_dim: 4,
        key_dim: 3,
        fourier_dim: 4,
        fourier_gamma: 1.0,
        rescale_digits: true,
        output_dim: 5,
    })
    .unwrap();
    let mut store = ParamStore::new();
    gcim.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(3));
    let coords = [(40.7128, -74.006), (40.72, -73.99), (35.68, 139.76)];
    for use_fourier in [true, false] {
        assert_passes(&store, |g, s| {
            let out = wrap(gcim.encode_batch(g, s, &coords, use_fourier))?;
            weigh(g, out, 4)
        });
    }
}

#[test]
fn pam_projection() {
    let pam = Pam::new(3, 4);
    let mut store = ParamStore::new();
    pam.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(5));
    let e = Tensor::randn(vec![2, 3], 1.0, &mut ChaCha8Rng::seed_from_u64(6));
    assert_passes(&store, |g, s| {
        let x = g.constant(e.clone());
        let h = wrap(pam.align_rows(g, s, x))?;
        weigh(g, h, 7)
    });
}

fn check_variant(ablation: Ablation) {
    let split = common::tiny_split();
    assert_eq!(split.vocab.num_pois(), 5);
    let config = common::tiny_config();
    let table = common::random_table(&split.vocab, config.embed.dim, 8);
    let model = TrainedModel::init(&config, ablation, &split.vocab, Some(&table)).unwrap();
    let seqs: Vec<_> = model
        .prompts(&split, Part::Train)
        .unwrap()
        .into_iter()
        .filter(|p| p.num_events() == 2)
        .collect();
    assert_eq!(seqs.len(), 2);
    let refs: Vec<_> = seqs.iter().collect();
    assert_passes(&model.store, |g, s| wrap(model.surrogate.loss(g, s, &refs)));
}

#[test]
fn full_surrogate() {
    check_variant(Ablation::FULL);
}

#[test]
fn surrogate_ablations() {
    for ablation in [
        Ablation { no_gcim: true, no_fourier: false, no_pam: false },
        Ablation { no_gcim: false, no_fourier: true, no_pam: false },
        Ablation { no_gcim: false, no_fourier: false, no_pam: true },
    ] {
        check_variant(ablation);
    }
}
