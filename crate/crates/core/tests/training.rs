mod common;

use std::fs;

use common::{episodes, tiny_train_config, write_split};
use refrec_core::checkpoint::Checkpoint;
use refrec_core::episode_io::{read_mask, write_json};
use refrec_core::netpbm::{read_pgm, write_ppm};
use refrec_core::train::{self, Pairing, Segmenter, TrainConfig, Trainer};
use refrec_core::{Error, IouAccumulator, Split};

fn dataset(root: &std::path::Path) {
    write_split(&root.join("train"), &episodes(Split::Train, 6, 32));
    write_split(&root.join("val"), &episodes(Split::Val, 3, 32));
}

#[test]
fn same_seed_gives_identical_losses_and_weights() {
    let data = episodes(Split::Train, 6, 32);
    let run = || {
        let mut t = Trainer::new(tiny_train_config(), data.clone()).unwrap();
        let losses: Vec<u64> = (0..3).map(|_| t.step().unwrap().loss.to_bits()).collect();
        (losses, t.checkpoint().to_bytes().unwrap())
    };
    assert_eq!(run(), run());
}

#[test]
fn loss_routing_follows_the_language_switch() {
    let data = episodes(Split::Train, 4, 32);
    let mut lang = Trainer::new(tiny_train_config(), data.clone()).unwrap();
    lang.step().unwrap();
    assert_eq!(lang.loss_routes().hungarian, 0);
    assert_eq!(lang.loss_routes().ordered, 2);

    let config = TrainConfig {
        language: false,
        ..tiny_train_config()
    };
    let mut base = Trainer::new(config, data).unwrap();
    base.step().unwrap();
    base.step().unwrap();
    assert_eq!(base.loss_routes().ordered, 0);
    assert_eq!(base.loss_routes().hungarian, 4);
    assert!(base.segmenter().embedder.is_none());
}

#[test]
fn bad_input_fails_before_training() {
    assert!(matches!(
        Trainer::new(tiny_train_config(), Vec::new()),
        Err(Error::Config(_))
    ));
    let data = episodes(Split::Train, 2, 32);
    let zero_batch = TrainConfig {
        batch_size: 0,
        ..tiny_train_config()
    };
    assert!(Trainer::new(zero_batch, data.clone()).is_err());
    let wrong_side = episodes(Split::Train, 2, 48);
    assert!(Trainer::new(tiny_train_config(), wrong_side).is_err());

    let dir = tempfile::tempdir().unwrap();
    let err = train::train(tiny_train_config(), dir.path(), &dir.path().join("out"));
    assert!(err.is_err());
    assert!(!dir.path().join("out").join("checkpoint.bin").exists());
}

#[test]
fn config_rejects_unknown_keys_and_fills_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    fs::write(&path, r#"{"batch_size": 4, "learning_rat": 0.1}"#).unwrap();
    let err = TrainConfig::from_json_file(&path).unwrap_err().to_string();
    assert!(err.contains("learning_rat"), "{err}");
    fs::write(&path, r#"{"batch_size": 4, "order_policy": "by_area"}"#).unwrap();
    let c = TrainConfig::from_json_file(&path).unwrap();
    assert_eq!(c.batch_size, 4);
    assert_eq!(c.learning_rate, 1e-3);
    assert_eq!(c.order_policy, refrec_core::OrderMode::ByArea);
}

#[test]
fn train_writes_checkpoints_and_report() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    let out = dir.path().join("run");
    let report = train::train(tiny_train_config(), dir.path(), &out).unwrap();
    assert_eq!(report.steps, 2);
    assert_eq!(report.losses.len(), 2);
    assert_eq!(report.evals.len(), 2);
    let splits: Vec<&str> = report.evals[1]
        .metrics
        .iter()
        .map(|m| m.split.as_str())
        .collect();
    assert_eq!(splits, ["train", "val"]);
    for f in [
        "checkpoint.bin",
        "checkpoint-000001.bin",
        "checkpoint-000002.bin",
        "report.json",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let last = fs::read(out.join("checkpoint-000002.bin")).unwrap();
    assert_eq!(last, fs::read(out.join("checkpoint.bin")).unwrap());
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let data = episodes(Split::Train, 4, 32);
    let mut t = Trainer::new(tiny_train_config(), data).unwrap();
    t.step().unwrap();
    let bytes = t.checkpoint().to_bytes().unwrap();
    let loaded = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(loaded.to_bytes().unwrap(), bytes);
    let restored = Segmenter::from_checkpoint(&loaded).unwrap();
    let again = Checkpoint::capture(
        &loaded.manifest.config,
        loaded.manifest.step,
        restored.t_max,
        &restored.model,
        restored.embedder.as_ref().map(|e| &e.pca),
    );
    assert_eq!(again.to_bytes().unwrap(), bytes);
}

#[test]
fn mismatched_architecture_is_rejected() {
    let data = episodes(Split::Train, 4, 32);
    let t = Trainer::new(tiny_train_config(), data).unwrap();
    let mut ckpt = t.checkpoint();
    ckpt.manifest.config.model.decoder.hidden = vec![5, 4];
    assert!(matches!(
        Segmenter::from_checkpoint(&ckpt),
        Err(Error::Checkpoint(_))
    ));

    let mut truncated = t.checkpoint();
    truncated.manifest.tensors.pop();
    assert!(truncated.to_bytes().is_err());

    let bytes = t.checkpoint().to_bytes().unwrap();
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
    assert!(Checkpoint::from_bytes(b"NOTACKPT").is_err());
}

#[test]
fn evaluation_is_repeatable_and_matches_dumped_masks() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    let out = dir.path().join("run");
    train::train(tiny_train_config(), dir.path(), &out).unwrap();
    let ckpt = out.join("checkpoint.bin");

    let first = train::evaluate(&ckpt, dir.path(), Pairing::Ordered).unwrap();
    let second = train::evaluate(&ckpt, dir.path(), Pairing::Ordered).unwrap();
    assert_eq!(first, second);

    // recount from the files written by predict
    let val = dir.path().join("val");
    let mut iou_sum = 0.0;
    let (mut inter_sum, mut union_sum, mut pairs) = (0u64, 0u64, 0usize);
    for ep_dir in refrec_core::episode_io::episode_dirs(&val).unwrap() {
        let pred_dir = dir.path().join("pred").join(ep_dir.file_name().unwrap());
        train::predict(
            &ckpt,
            &ep_dir.join("image.ppm"),
            &ep_dir.join("phrases.json"),
            &pred_dir,
        )
        .unwrap();
        let mut i = 0;
        while ep_dir.join("masks").join(format!("{i}.pgm")).exists() {
            let gt = read_pgm(&ep_dir.join("masks").join(format!("{i}.pgm"))).unwrap();
            let pred = read_pgm(&pred_dir.join(format!("mask_{i}.pgm"))).unwrap();
            let a: Vec<bool> = pred.bytes.iter().map(|&v| v == 255).collect();
            let b: Vec<bool> = gt.bytes.iter().map(|&v| v == 255).collect();
            let (inter, union) = common::hard_counts(&a, &b);
            iou_sum += if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            };
            inter_sum += inter;
            union_sum += union;
            pairs += 1;
            i += 1;
        }
    }
    let val_metrics = first.iter().find(|m| m.split == "val").unwrap();
    assert_eq!(val_metrics.expressions, pairs);
    assert!((val_metrics.instance_iou - iou_sum / pairs as f64).abs() < 1e-12);
    assert!((val_metrics.overall_iou - inter_sum as f64 / union_sum as f64).abs() < 1e-12);
}

#[test]
fn perfect_predictions_score_one() {
    let mut acc = IouAccumulator::default();
    for ep in episodes(Split::Val, 5, 32) {
        for m in ep.masks() {
            acc.add_pair(&m.to_tensor(), &m, 0.5).unwrap();
        }
    }
    assert_eq!(acc.instance_iou(), 1.0);
    assert_eq!(acc.overall_iou(), 1.0);
}

#[test]
fn predict_writes_one_mask_and_map_per_phrase() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    let out = dir.path().join("run");
    train::train(tiny_train_config(), dir.path(), &out).unwrap();
    let ckpt = out.join("checkpoint.bin");
    let ep = dir.path().join("val").join("000000");
    let phrases: Vec<String> =
        refrec_core::episode_io::read_phrases(&ep.join("phrases.json")).unwrap();

    let a = dir.path().join("a");
    train::predict(&ckpt, &ep.join("image.ppm"), &ep.join("phrases.json"), &a).unwrap();
    let mut names: Vec<String> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    let mut want: Vec<String> = (0..phrases.len())
        .flat_map(|i| [format!("mask_{i}.pgm"), format!("prob_{i}.pgm")])
        .collect();
    want.sort();
    assert_eq!(names, want);
    for i in 0..phrases.len() {
        read_mask(&a.join(format!("mask_{i}.pgm"))).unwrap();
    }

    let b = dir.path().join("b");
    train::predict(&ckpt, &ep.join("image.ppm"), &ep.join("phrases.json"), &b).unwrap();
    for name in &want {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap()
        );
    }
}

#[test]
fn predict_names_the_bad_file() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    let out = dir.path().join("run");
    train::train(tiny_train_config(), dir.path(), &out).unwrap();
    let ckpt = out.join("checkpoint.bin");
    let ep = dir.path().join("val").join("000000");

    let small = dir.path().join("small.ppm");
    write_ppm(&small, 8, 8, &[0; 3 * 64]).unwrap();
    let err = train::predict(&ckpt, &small, &ep.join("phrases.json"), dir.path()).unwrap_err();
    assert!(err.to_string().contains("small.ppm"), "{err}");

    let phrases = dir.path().join("p.json");
    fs::write(&phrases, "{\"not\": \"an array\"}").unwrap();
    let err = train::predict(&ckpt, &ep.join("image.ppm"), &phrases, dir.path()).unwrap_err();
    assert!(err.to_string().contains("p.json"), "{err}");

    write_json(&phrases, &["purple dodecahedron"]).unwrap();
    // unseen words still embed through the toy encoder
    train::predict(
        &ckpt,
        &ep.join("image.ppm"),
        &phrases,
        &dir.path().join("c"),
    )
    .unwrap();

    let garbage = dir.path().join("garbage.bin");
    fs::write(&garbage, b"REFRECK1garbage").unwrap();
    let err = train::predict(
        &garbage,
        &ep.join("image.ppm"),
        &ep.join("phrases.json"),
        dir.path(),
    )
    .unwrap_err();
    assert!(err.to_string().contains("garbage.bin"), "{err}");
}

#[test]
fn baseline_emits_t_max_masks_and_uses_hungarian_pairing() {
    let data = episodes(Split::Train, 4, 32);
    let max_refs = data.iter().map(|e| e.referents.len()).max().unwrap();
    let config = TrainConfig {
        language: false,
        ..tiny_train_config()
    };
    let t = Trainer::new(config, data.clone()).unwrap();
    let seg = t.segmenter();
    assert_eq!(seg.t_max, max_refs + 2);
    let ep = &data[0];
    let masks = seg.masks(&ep.image_tensor(), &ep.phrases()).unwrap();
    assert_eq!(masks.len(), max_refs + 2);
    let acc = seg.evaluate(&data, Pairing::Hungarian).unwrap();
    assert_eq!(
        acc.pairs,
        data.iter().map(|e| e.referents.len()).sum::<usize>()
    );
}
