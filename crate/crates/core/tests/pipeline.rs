use snl_core::blocks::{block_forward, build_block_affinity, BlockTape, ALL_VARIANTS};
use snl_core::harness::{gen_dataset, run, train, DatasetSpec, PairedPatchDataset, ToyNet, TrainConfig, TrainOptions};
use snl_core::io::{read_matrix_file, write_binary_file, write_csv_file};
use snl_core::linalg::rel_error;
use snl_core::spectral::{poly_filter_apply, spectral_oracle};
use snl_core::{synth, BlockConfig, BlockParams, FeatureMap, FilterSpec, Matrix, Variant};

#[test]
fn single_precision_tracks_double() {
    for v in ALL_VARIANTS {
        let cfg = BlockConfig::new(v, 4, 2).with_order(3);
        let mut rng = synth::rng(9);
        let x: FeatureMap<f64> = synth::uniform_feature_map(&mut rng, 3, 4, 4);
        let p = BlockParams::<f64>::init(&cfg, &mut rng).unwrap();
        let mut p = p;
        for w in &mut p.filters {
            *w = synth::uniform_matrix(&mut rng, w.rows(), w.cols(), -0.5, 0.5);
        }
        let y64 = block_forward(&x, &cfg, &p).unwrap();
        let x32 = FeatureMap::new(3, 4, x.values().cast::<f32>()).unwrap();
        let p32 = BlockParams {
            w_phi: p.w_phi.cast(),
            w_psi: p.w_psi.cast(),
            w_z: p.w_z.as_ref().map(|m| m.cast()),
            filters: p.filters.iter().map(|m| m.cast()).collect(),
        };
        let y32 = block_forward(&x32, &cfg, &p32).unwrap();
        let err = rel_error(&y32.values().cast::<f64>(), y64.values()).unwrap();
        assert!(err < 1e-5, "{v}: {err}");
    }
}

#[test]
fn saved_params_reproduce_the_forward_pass() {
    let cfg: BlockConfig =
        serde_json::from_str(r#"{"variant":"CHEB_K","c_in":4,"c_s":2,"order":4,"kernel":"exp_dot"}"#).unwrap();
    let mut rng = synth::rng(3);
    let x: FeatureMap<f64> = synth::uniform_feature_map(&mut rng, 4, 4, 4);
    let p = BlockParams::random(&cfg, &mut rng).unwrap();
    let dir = tempfile::tempdir().unwrap();
    p.save(&cfg, dir.path()).unwrap();
    let (cfg2, p2) = BlockParams::<f64>::load(dir.path()).unwrap();
    assert_eq!(cfg2, cfg);
    assert_eq!(block_forward(&x, &cfg, &p).unwrap(), block_forward(&x, &cfg2, &p2).unwrap());
}

#[test]
fn csv_and_binary_files_load_the_same_matrix() {
    let m: Matrix<f64> = synth::uniform_matrix(&mut synth::rng(1), 5, 3, -10.0, 10.0);
    let dir = tempfile::tempdir().unwrap();
    let (csv, bin) = (dir.path().join("m.csv"), dir.path().join("m.bin"));
    write_csv_file(&m, &csv).unwrap();
    write_binary_file(&m, &bin).unwrap();
    assert_eq!(read_matrix_file::<f64>(&csv).unwrap(), m);
    assert_eq!(read_matrix_file::<f64>(&bin).unwrap(), m);
}

#[test]
fn block_affinity_feeds_the_spectral_oracle() {
    let cfg = BlockConfig::new(Variant::Snl, 4, 2);
    let mut rng = synth::rng(21);
    let x: FeatureMap<f64> = synth::uniform_feature_map(&mut rng, 4, 4, 4);
    let p = BlockParams::random(&cfg, &mut rng).unwrap();
    let a = build_block_affinity(&x, &cfg, &p).unwrap();
    let theta = vec![0.3, -1.2, 0.7, 0.05];
    let z = x.values().clone();
    let got = poly_filter_apply(&a, &z, &FilterSpec::monomial(theta.clone()).unwrap()).unwrap();
    let want = spectral_oracle(&a, &z, &theta).unwrap();
    assert!(rel_error(&got, &want).unwrap() < 1e-10);
}

#[test]
fn tape_backward_is_linear_in_the_upstream_gradient() {
    let cfg = BlockConfig::new(Variant::Snl, 4, 2);
    let mut rng = synth::rng(5);
    let x: FeatureMap<f64> = synth::uniform_feature_map(&mut rng, 3, 3, 4);
    let p = BlockParams::random(&cfg, &mut rng).unwrap();
    let tape = BlockTape::record(&x, &cfg, &p).unwrap();
    let g: Matrix<f64> = synth::uniform_matrix(&mut rng, 9, 4, -1.0, 1.0);
    let one = tape.backward(&g).unwrap();
    let two = tape.backward(&g.scale(2.0)).unwrap();
    assert!(rel_error(&two.x, &one.x.scale(2.0)).unwrap() < 1e-14);
    assert!(rel_error(&two.params.w_phi, &one.params.w_phi.scale(2.0)).unwrap() < 1e-14);
}

fn tiny() -> DatasetSpec {
    DatasetSpec::new(24, 4, 2)
}

#[test]
fn reloaded_dataset_trains_identically() {
    let data = gen_dataset(4, &tiny()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    data.save(dir.path()).unwrap();
    let back = PairedPatchDataset::load(dir.path()).unwrap();
    let cfg = BlockConfig::new(Variant::Snl, 4, 2);
    let opts = TrainOptions::new(20, 0.1);
    let mut a = ToyNet::new(4, Some(cfg), 1).unwrap();
    let mut b = a.clone();
    assert_eq!(train(&mut a, &data, &opts, 2).unwrap(), train(&mut b, &back, &opts, 2).unwrap());
    assert_eq!(a, b);
}

#[test]
fn run_is_reproducible_and_seed_sensitive() {
    let mut cfg = TrainConfig::long_range(Some(BlockConfig::new(Variant::Ns, 4, 2)));
    cfg.dataset = tiny();
    cfg.train = TrainOptions::new(15, 0.05);
    cfg.train.eval_every = 5;
    let a = run(&cfg, 11).unwrap();
    assert_eq!(a.history, run(&cfg, 11).unwrap().history);
    assert_ne!(a.history, run(&cfg, 12).unwrap().history);
    assert_eq!(a.history.iter().map(|m| m.step).collect::<Vec<_>>(), [0, 5, 10, 15]);
}

#[test]
fn mismatched_block_width_is_a_config_error() {
    let mut cfg = TrainConfig::long_range(Some(BlockConfig::new(Variant::Snl, 4, 2)));
    cfg.dataset = tiny();
    cfg.dataset.channels = 6;
    assert!(matches!(run(&cfg, 0), Err(snl_core::Error::Config(_))));
}
