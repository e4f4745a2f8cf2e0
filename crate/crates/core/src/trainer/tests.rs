use super::*;
use crate::data::synth::synth_generate;
use crate::model::{Fusion, Supervision};
use tempfile::TempDir;

fn dataset(n: usize, size: usize, seed: u64) -> (TempDir, DatasetManifest) {
    let dir = tempfile::tempdir().unwrap();
    synth_generate(n, size, seed, dir.path()).unwrap();
    let m = DatasetManifest::from_dir(dir.path(), size).unwrap();
    (dir, m)
}

fn small_cfg(out: &Path) -> TrainConfig {
    let mut cfg = TrainConfig::toy(out);
    cfg.model.input_size = 64;
    cfg.batch_size = 3;
    cfg.epochs = 2;
    cfg
}

fn bytes(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn config_validation() {
    let mut c = TrainConfig::toy("x");
    c.validate().unwrap();
    TrainConfig::full(ModelConfig::dgnet_s(), "x").validate().unwrap();
    c.lr_min = c.lr_max;
    assert!(matches!(c.validate(), Err(Error::Config(_))));
    let mut c = TrainConfig::toy("x");
    c.batch_size = 0;
    assert!(matches!(c.validate(), Err(Error::Config(_))));
}

#[test]
fn zero_epochs_saves_initialization() {
    let (dir, m) = dataset(4, 64, 1);
    let mut cfg = small_cfg(&dir.path().join("run"));
    cfg.epochs = 0;
    cfg.seed = 5;
    let r = train(&cfg, &m).unwrap();
    assert!(r.log.is_empty());
    assert_eq!(r.best_checkpoint, None);
    let init = Model::<f32>::new(cfg.model.clone(), 5).unwrap();
    assert_eq!(Model::<f32>::load(&r.last_checkpoint).unwrap().params, init.params);
    let log = std::fs::read_to_string(dir.path().join("run").join(LOSS_LOG)).unwrap();
    assert_eq!(log, LOG_HEADER);
}

#[test]
fn log_rows_follow_schedule_and_labels_are_cached() {
    let (dir, m) = dataset(5, 64, 2);
    let cfg = small_cfg(&dir.path().join("run"));
    let r = train(&cfg, &m).unwrap();
    // 5 samples in batches of 3: two steps per epoch
    assert_eq!(r.iterations, 4);
    assert_eq!(r.log.len(), 4);
    for (i, row) in r.log.iter().enumerate() {
        assert_eq!(row.iteration, i);
        assert_eq!(row.lr, cfg.schedule().lr_at(i / 2));
        assert!(row.loss.is_finite());
        assert!(row.loss.mse > 0.0);
        let sum = row.loss.wbce + row.loss.wiou + row.loss.mse;
        assert!((row.loss.total - sum).abs() < 1e-5 * sum);
    }
    let text = std::fs::read_to_string(dir.path().join("run").join(LOSS_LOG)).unwrap();
    assert!(text.starts_with(LOG_HEADER));
    assert_eq!(text.lines().count(), 5);
    assert_eq!(read_log(&dir.path().join("run").join(LOSS_LOG), usize::MAX).unwrap(), r.log);
    assert!(r.best_epoch.is_some());
    assert!(r.best_checkpoint.as_ref().unwrap().is_file());
    for (_, mask) in &m.pairs {
        assert!(crate::data::label_path(mask, GRAD_SUFFIX).is_file());
        assert!(crate::data::label_path(mask, BOUND_SUFFIX).is_file());
    }
}

#[test]
fn two_runs_are_identical() {
    let (dir, m) = dataset(6, 64, 3);
    let mut cfg = small_cfg(&dir.path().join("a"));
    cfg.hflip = false;
    let a = train(&cfg, &m).unwrap();
    cfg.out_dir = dir.path().join("b");
    let b = train(&cfg, &m).unwrap();
    assert_eq!(bytes(&a.last_checkpoint), bytes(&b.last_checkpoint));
    assert_eq!(a.log, b.log);
}

#[test]
fn augmented_runs_are_reproducible_too() {
    let (dir, m) = dataset(6, 64, 4);
    let mut cfg = small_cfg(&dir.path().join("a"));
    cfg.random_crop = true;
    let a = train(&cfg, &m).unwrap();
    cfg.out_dir = dir.path().join("b");
    let b = train(&cfg, &m).unwrap();
    assert_eq!(bytes(&a.last_checkpoint), bytes(&b.last_checkpoint));
}

#[test]
fn resume_continues_bit_exactly() {
    let (dir, m) = dataset(7, 64, 5);
    let mut full = small_cfg(&dir.path().join("full"));
    full.epochs = 3;
    let whole = train(&full, &m).unwrap();

    // interrupt mid-epoch, then continue in a fresh directory
    let mut first = full.clone();
    first.out_dir = dir.path().join("part");
    first.max_iterations = Some(4);
    let part = train(&first, &m).unwrap();
    assert_eq!(part.iterations, 4);
    let mut second = full.clone();
    second.out_dir = dir.path().join("part");
    second.resume = Some(part.last_checkpoint.clone());
    let resumed = train(&second, &m).unwrap();

    assert_eq!(resumed.log[4], whole.log[4]);
    assert_eq!(resumed.log, whole.log);
    assert_eq!(bytes(&resumed.last_checkpoint), bytes(&whole.last_checkpoint));
    assert_eq!(resumed.best_epoch, whole.best_epoch);
}

#[test]
fn resume_rejects_other_config() {
    let (dir, m) = dataset(3, 64, 6);
    let cfg = small_cfg(&dir.path().join("run"));
    let r = train(&cfg, &m).unwrap();
    let mut other = cfg.clone();
    other.resume = Some(r.last_checkpoint.clone());
    other.seed = 9;
    assert!(matches!(train(&other, &m), Err(Error::Checkpoint(_))));
    let mut other = cfg;
    other.resume = Some(r.last_checkpoint);
    other.model.cg = 16;
    assert!(matches!(train(&other, &m), Err(Error::Checkpoint(_))));
}

#[test]
fn non_finite_loss_names_iteration() {
    let (dir, m) = dataset(2, 64, 7);
    let mut cfg = small_cfg(&dir.path().join("run"));
    cfg.batch_size = 1;
    let mut samples = load_training_set(&m, &cfg).unwrap();
    samples[1].image.data_mut()[0] = f32::NAN;
    cfg.hflip = false;
    // shuffled order decides when the poisoned sample is drawn
    let at = epoch_order(2, cfg.seed, 0).iter().position(|&i| i == 1).unwrap();
    match train_on(&cfg, &samples) {
        Err(Error::NonFiniteLoss { iteration }) => assert_eq!(iteration, at),
        other => panic!("expected a non-finite loss, got {other:?}"),
    }
    // a diverging optimizer is caught on the step after the blow-up
    let mut cfg = small_cfg(&dir.path().join("diverge"));
    cfg.lr_max = 1e38;
    let samples = load_training_set(&m, &cfg).unwrap();
    match train_on(&cfg, &samples) {
        Err(Error::NonFiniteLoss { iteration }) => assert!(iteration >= 1, "{iteration}"),
        other => panic!("expected a non-finite loss, got {other:?}"),
    }
}

#[test]
fn empty_training_set_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = DatasetManifest {
        root: dir.path().to_path_buf(),
        pairs: Vec::new(),
        resize: 64,
    };
    let cfg = small_cfg(&dir.path().join("run"));
    assert!(matches!(train(&cfg, &m), Err(Error::Dataset(_))));
}

#[test]
fn inference_is_deterministic_and_keeps_resolution() {
    let (dir, m) = dataset(3, 64, 8);
    let cfg = small_cfg(&dir.path().join("run"));
    let r = train(&cfg, &m).unwrap();
    // an odd-sized image is resized in and out
    let odd = dir.path().join("odd");
    let (img, _) = crate::data::synth::synth_sample(1, 0, 40).unwrap();
    crate::data::image_io::save_rgb(&img, &odd.join("a.png")).unwrap();
    let a = infer(&r.last_checkpoint, &odd, &dir.path().join("p1")).unwrap();
    let b = infer(&r.last_checkpoint, &odd, &dir.path().join("p2")).unwrap();
    assert_eq!(bytes(&a[0]), bytes(&b[0]));
    let g = crate::data::load_gray::<f32>(&a[0]).unwrap();
    assert_eq!(g.shape(), &[1, 40, 40]);
    // the dataset root resolves to its Imgs/ directory
    let preds = infer(&r.last_checkpoint, dir.path(), &dir.path().join("p3")).unwrap();
    assert_eq!(preds.len(), 3);
}

#[test]
fn ablations_train_and_infer() {
    let (dir, m) = dataset(3, 64, 9);
    for (name, model) in [
        ("base", ModelConfig::toy().base()),
        ("boundary", ModelConfig::toy().with_ablation(true, Supervision::Boundary, Fusion::Git)),
        ("concat", ModelConfig::toy().with_ablation(true, Supervision::Gradient, Fusion::Concat)),
    ] {
        let mut cfg = small_cfg(&dir.path().join(name));
        cfg.model = ModelConfig { input_size: 64, ..model };
        cfg.epochs = 1;
        let r = train(&cfg, &m).unwrap();
        if name == "base" {
            assert!(r.log.iter().all(|row| row.loss.mse == 0.0));
            assert!(r.model.arch.texture.is_none());
        } else {
            assert!(r.log.iter().all(|row| row.loss.mse > 0.0));
        }
        let out = infer(&r.last_checkpoint, dir.path(), &dir.path().join(format!("{name}_pred"))).unwrap();
        assert_eq!(out.len(), 3);
    }
}

#[test]
fn boundary_supervision_uses_boundary_labels() {
    let (dir, m) = dataset(2, 64, 10);
    let mut cfg = small_cfg(&dir.path().join("run"));
    cfg.model.ablation.supervision = Supervision::Boundary;
    let s = load_training_set(&m, &cfg).unwrap();
    assert_eq!(texture_target(&s[0], &cfg.model).unwrap(), s[0].boundary_label.as_ref());
    cfg.model.ablation.supervision = Supervision::Gradient;
    assert_eq!(texture_target(&s[0], &cfg.model).unwrap(), s[0].gradient_label.as_ref());
}

#[test]
fn crop_extracts_window() {
    let t = Tensor::from_fn(&[2, 4, 4], |i| i as f32);
    let c = crop_chw(&t, 1, 2, 2).unwrap();
    assert_eq!(c.data(), &[6.0, 7.0, 10.0, 11.0, 22.0, 23.0, 26.0, 27.0]);
}

#[test]
fn described_settings_read_back_identically() {
    let mut cfg = TrainConfig::full(ModelConfig::dgnet(), "x");
    cfg.max_iterations = Some(17);
    cfg.lr_min = 3.3e-6;
    cfg.seed = u64::MAX;
    cfg.canny.low_ratio = 0.07;
    cfg.model.ablation.supervision = Supervision::Boundary;
    let map: BTreeMap<String, String> = describe(&cfg)
        .lines()
        .map(|l| {
            let (k, v) = l.split_once(" = ").unwrap();
            (k.to_string(), v.to_string())
        })
        .collect();
    let keys: Vec<&str> = crate::model::config::CONFIG_KEYS.iter().chain(&TRAIN_KEYS).copied().collect();
    assert_eq!(map.len(), keys.len());
    assert!(map.keys().all(|k| keys.contains(&k.as_str())));
    assert_eq!(TrainConfig::toy("x").overlay(&map).unwrap(), cfg);
    let bad: BTreeMap<String, String> = [("lr_max".to_string(), "fast".to_string())].into();
    assert!(matches!(TrainConfig::toy("x").overlay(&bad), Err(Error::Config(_))));
}
