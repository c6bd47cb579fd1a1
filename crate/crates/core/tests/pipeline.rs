use std::collections::HashSet;
use std::io::Write;

use persona_graph::config::Settings;
use persona_graph::labels::TypeCode;
use persona_graph::pipeline::{
    ingest, mask_label_words, mask_records, synth_dataset, write_jsonl, DataFormat, SynthSpec, UserRecord,
};
use persona_graph::pipeline::{evaluate, prepare_users, run_experiment, train_graphs, Ablation};
use persona_graph::providers::build_provider;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_settings(extra: &[(&str, &str)]) -> Settings {
    let mut pairs = vec![
        ("encoder.model_dim", "16"),
        ("encoder.key_dim", "16"),
        ("encoder.table_size", "512"),
        ("model.hidden_dim", "16"),
        ("train.epochs", "6"),
        ("train.lr", "0.01"),
    ];
    pairs.extend_from_slice(extra);
    Settings::from_pairs(pairs).unwrap()
}

fn corpus(users: usize) -> Vec<UserRecord> {
    synth_dataset(&SynthSpec {
        users,
        posts_per_user: 4,
        ..SynthSpec::default()
    })
}

fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.path().join(name);
    std::fs::File::create(&path).unwrap().write_all(text.as_bytes()).unwrap();
    path
}

#[test]
fn csv_ingest_splits_posts_and_skips_blank_users() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(
        &dir,
        "d.csv",
        "type,posts\nINTJ,\"first post|||second, with comma|||  \"\nenfp,\"   |||  \"\nESTP,only one\n",
    );
    let got = ingest(&path, DataFormat::Csv).unwrap();
    assert_eq!(got.records.len(), 2);
    assert_eq!(got.rejected, vec!["u1".to_owned()]);
    assert_eq!(got.records[0].user_id, "u0");
    assert_eq!(got.records[0].posts, vec!["first post", "second, with comma"]);
    assert_eq!(got.records[1].mbti, TypeCode::parse("ESTP").unwrap());
}

#[test]
fn csv_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = write(&dir, "a.csv", "kind,posts\nINTJ,x\n");
    assert_eq!(ingest(&missing, DataFormat::Csv).unwrap_err().exit_code(), 2);
    let bad_type = write(&dir, "b.csv", "type,posts\nXXXX,x\n");
    assert!(ingest(&bad_type, DataFormat::Csv).is_err());
    assert!(ingest(&dir.path().join("nope.csv"), DataFormat::Csv).is_err());
}

#[test]
fn jsonl_round_trip_and_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let recs = corpus(5);
    let path = dir.path().join("r.jsonl");
    write_jsonl(&path, &recs).unwrap();
    assert_eq!(DataFormat::from_path(&path), DataFormat::Jsonl);
    assert_eq!(ingest(&path, DataFormat::Jsonl).unwrap().records, recs);

    let broken = write(
        &dir,
        "x.jsonl",
        "{\"user_id\":\"a\",\"mbti\":\"INTJ\",\"posts\":[\"p\"]}\n\n{\"user_id\": oops}\n",
    );
    match ingest(&broken, DataFormat::Jsonl) {
        Err(persona_graph::Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("unexpected {other:?}"),
    }
}

/// Lowercased alphanumeric runs, the unit the masker works on.
fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn forbidden() -> HashSet<String> {
    let mut set = HashSet::new();
    for a in ["e", "i"] {
        for b in ["s", "n"] {
            for c in ["t", "f"] {
                for d in ["j", "p"] {
                    let code = format!("{a}{b}{c}{d}");
                    set.insert(format!("{code}s"));
                    set.insert(code);
                }
            }
        }
    }
    for w in ["introvert", "introverted", "extrovert", "extroverted", "extravert", "introverts"] {
        set.insert(w.to_owned());
    }
    set
}

#[test]
fn masked_corpus_has_no_label_words() {
    let mut recs = corpus(12);
    recs[0].posts.push("As an INTJ I think INFPs are fun".into());
    recs[3].posts.push("so Introverted, typical ISFJ!".into());
    recs[5].posts = vec!["ENTP".into()];
    let masked = mask_records(&recs);
    assert_eq!(masked.len(), 11, "user with only label words is dropped");
    let bad = forbidden();
    for r in &masked {
        for p in &r.posts {
            let hit: Vec<String> = tokens(p).into_iter().filter(|t| bad.contains(t)).collect();
            assert!(hit.is_empty(), "{p:?} leaks {hit:?}");
        }
    }
}

#[test]
fn masking_is_idempotent_over_random_texts() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let pieces = [
        "INTJ", "enfp", "EsTj", "INFPs", "introvert", "Introverted", "extraverts", "hello", "world",
        "xINTJ", "intj's", "a", "!", "...", " ", "  ", "\n", "\t", ",", "-", "ünïcode", "数字", "42",
        "feeling", "thinkers", "ok",
    ];
    let bad = forbidden();
    for _ in 0..1000 {
        let n = rng.gen_range(0..14);
        let text: String = (0..n)
            .map(|_| {
                let p = *pieces.choose(&mut rng).unwrap();
                if rng.gen_bool(0.5) { format!("{p} ") } else { p.to_owned() }
            })
            .collect();
        let once = mask_label_words(&text);
        assert_eq!(mask_label_words(&once), once, "input {text:?}");
        assert!(tokens(&once).iter().all(|t| !bad.contains(t)), "{text:?} -> {once:?}");
        let label_pieces = ["intj", "enfp", "estj", "infps", "introvert", "introverted", "extraverts", "feeling", "thinkers"];
        if tokens(&text).iter().all(|t| !label_pieces.contains(&t.as_str())) {
            assert_eq!(once, text);
        }
    }
}

#[test]
fn training_loss_decreases_early() {
    let s = small_settings(&[("train.patience", "0")]);
    let p = build_provider(&s.provider).unwrap();
    let g = prepare_users(&corpus(10), p.as_ref(), &s.edge).unwrap();
    let out = train_graphs(&g, &[], &s, 3).unwrap();
    assert_eq!(out.history.len(), 6);
    assert!(out.history[4].train_loss < out.history[0].train_loss, "{:?}", out.history);
}

#[test]
fn early_stopping_keeps_best_params() {
    let s = small_settings(&[("train.patience", "2"), ("train.epochs", "40"), ("train.lr", "0.05")]);
    let p = build_provider(&s.provider).unwrap();
    let g = prepare_users(&corpus(12), p.as_ref(), &s.edge).unwrap();
    let out = train_graphs(&g[..8], &g[8..], &s, 1).unwrap();
    let vals: Vec<f64> = out.history.iter().map(|h| h.val_avg.unwrap()).collect();
    let best = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(vals[out.best_epoch], best);
    assert_eq!(vals.iter().position(|&v| v == best), Some(out.best_epoch));
    if out.history.len() < 40 {
        assert_eq!(out.history.len(), out.best_epoch + 3);
    }
    let re = persona_graph::pipeline::evaluate_graphs(&out.params, &g[8..]).unwrap();
    assert_eq!(re.avg, best);
}

#[test]
fn experiment_is_deterministic_across_thread_counts() {
    let s = small_settings(&[("train.epochs", "3")]);
    let recs = corpus(12);
    let a = run_experiment(&recs, &s, 2, Ablation::None).unwrap().report.to_json().unwrap();
    let b = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| run_experiment(&recs, &s, 2, Ablation::None).unwrap().report.to_json().unwrap());
    assert_eq!(a, b);
    let batched = small_settings(&[("train.epochs", "3"), ("train.batch_size", "4")]);
    let c = run_experiment(&recs, &batched, 1, Ablation::None).unwrap().report.to_json().unwrap();
    let d = run_experiment(&recs, &batched, 1, Ablation::None).unwrap().report.to_json().unwrap();
    assert_eq!(c, d);
}

#[test]
fn multi_run_aggregation_matches_oracle() {
    let s = small_settings(&[("train.epochs", "3"), ("train.seed", "10")]);
    let r = run_experiment(&corpus(12), &s, 3, Ablation::None).unwrap().report;
    assert_eq!(r.runs, 3);
    assert_eq!(r.seeds, vec![10, 11, 12]);
    assert!(r.errors.is_empty());
    let per: Vec<[f64; 4]> = r.per_run.iter().map(|d| d.dims.to_array()).collect();
    for k in 0..4 {
        let mean = (per[0][k] + per[1][k] + per[2][k]) / 3.0;
        let var = per.iter().map(|p| (p[k] - mean).powi(2)).sum::<f64>() / 3.0;
        assert!((r.dims.to_array()[k] - mean).abs() < 1e-9);
        assert!((r.stddev.dims.to_array()[k] - var.sqrt()).abs() < 1e-9);
    }
    let avg = r.dims.to_array().iter().sum::<f64>() / 4.0;
    assert!((r.avg - avg).abs() < 1e-9);
    for d in &r.per_run {
        let a = d.dims.to_array().iter().sum::<f64>() / 4.0;
        assert!((d.avg - a).abs() < 1e-12);
    }
    assert_eq!(r.users.train + r.users.val + r.users.test, 12);
}

#[test]
fn evaluation_does_not_touch_params() {
    let s = small_settings(&[("train.epochs", "2")]);
    let recs = corpus(10);
    let exp = run_experiment(&recs, &s, 1, Ablation::None).unwrap();
    let before = exp.checkpoint.params.clone();
    let first = evaluate(&exp.checkpoint.params, &recs, &s).unwrap();
    assert_eq!(exp.checkpoint.params, before);
    assert_eq!(evaluate(&exp.checkpoint.params, &recs, &s).unwrap(), first);
}

#[test]
fn ablations_run_and_are_labeled() {
    let s = small_settings(&[("train.epochs", "2")]);
    let recs = corpus(10);
    for a in Ablation::ALL {
        let r = run_experiment(&recs, &s, 1, a).unwrap().report;
        assert_eq!(r.ablation, a);
        let json: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(json["ablation"], a.as_str());
    }
}

#[test]
fn too_few_users_is_an_input_error() {
    let err = run_experiment(&corpus(4), &small_settings(&[]), 1, Ablation::None).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}
