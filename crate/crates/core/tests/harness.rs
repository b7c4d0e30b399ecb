use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use mtlab::corpus::{Manifest, ManifestEntry, Split, SplitSource};
use mtlab::harness::{load_source, parse_report_csv, CorpusSource, render_report, run_experiment, ExperimentPlan, ReportFormat, REPLICA_SMOKE_PLAN};

const TINY: &str = "\
corpus = replica
seeds = 1
vocab_size = 300
max_decode_len = 16
train_limit = 24
eval_limit = 8

[model]
num_layers = 1
num_heads = 2
d_model = 16
d_ff = 32
max_seq_len = 48
dropout_rate = 0

[base multi]
kind = multilingual
pairs = en,pt
epochs = 1
learning_rate = 0.003

[strategy A]
kind = direct
base = multi
epochs = 1
learning_rate = 0.003

[strategy B]
kind = scratch
epochs = 1
learning_rate = 0.003
";

fn plan(extra: &str) -> ExperimentPlan {
    ExperimentPlan::parse(&format!("{extra}\n{TINY}"), "tiny.plan", Path::new(".")).unwrap()
}

fn kv(path: &Path) -> BTreeMap<String, String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter_map(|l| l.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect()
}

#[test]
fn per_pair_protocol_shape_selection_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let p = plan("selection = per-pair");
    let r = run_experiment(&p, dir.path()).unwrap();
    assert_eq!(r.pairs, ["quy", "aym", "bzd", "cni", "shp", "czn"]);
    assert!(r.failed.is_empty(), "{:?}", r.failed);

    let dev = r.scores.keys().filter(|k| k.2 == Split::Dev).count();
    let test = r.scores.keys().filter(|k| k.2 == Split::Test).count();
    assert_eq!(dev, 12);
    assert_eq!(test, 6);

    // The phase-B strategy is the dev argmax, ties going to A.
    for pair in &r.pairs {
        let a = r.score("A", pair, Split::Dev).unwrap();
        let b = r.score("B", pair, Split::Dev).unwrap();
        let want = if b > a { "B" } else { "A" };
        assert_eq!(r.selected[pair], want, "{pair}: A={a} B={b}");
        assert!(r.score(want, pair, Split::Test).is_some());
        let other = if want == "A" { "B" } else { "A" };
        assert!(r.score(other, pair, Split::Test).is_none());
    }

    // Phase-B training sets are train + dev.
    for pair in &r.pairs {
        let dev_cell = kv(&dir.path().join(format!("cells/dev/{}/{pair}.txt", r.selected[pair])));
        let test_cell = kv(&dir.path().join(format!("cells/test/{}/{pair}.txt", r.selected[pair])));
        let rows = |c: &BTreeMap<String, String>| -> usize {
            c["seed.1.train_rows"].parse::<usize>().unwrap() + c["seed.1.dropped"].parse::<usize>().unwrap()
        };
        assert_eq!(rows(&dev_cell), 24, "{pair}");
        assert_eq!(rows(&test_cell), 24 + 8, "{pair}");
    }

    // Every reported cell traces to a checkpoint and a score file.
    for (strategy, pair, split) in r.scores.keys() {
        let cell = kv(&dir.path().join(format!("cells/{split}/{strategy}/{pair}.txt")));
        assert!(dir.path().join(&cell["seed.1.checkpoint"]).join("model.ckpt").is_file());
        assert!(dir.path().join(&cell["seed.1.score_file"]).is_file());
    }

    let again = run_experiment(&p, dir.path()).unwrap();
    assert_eq!(again.training_steps, 0);
    assert_eq!(again.scores, r.scores);
    assert_eq!(render_report(&again, ReportFormat::TextTable), render_report(&r, ReportFormat::TextTable));
}

#[test]
fn changing_one_strategy_retrains_only_its_cells() {
    let dir = tempfile::tempdir().unwrap();
    let first = run_experiment(&plan(""), dir.path()).unwrap();
    let changed = TINY.replace("[strategy B]\nkind = scratch\nepochs = 1", "[strategy B]\nkind = scratch\nepochs = 2");
    let p = ExperimentPlan::parse(&changed, "tiny.plan", Path::new(".")).unwrap();
    let second = run_experiment(&p, dir.path()).unwrap();
    assert!(second.training_steps > 0);
    assert!(second.training_steps < first.training_steps);
    for pair in &first.pairs {
        for split in [Split::Dev, Split::Test] {
            assert_eq!(first.score("A", pair, split), second.score("A", pair, split));
        }
    }
}

#[test]
fn full_grid_scores_every_cell_and_csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_experiment(&plan(""), dir.path()).unwrap();
    assert_eq!(r.scores.len(), 24);
    assert!(r.selected.is_empty());
    let csv = render_report(&r, ReportFormat::Csv);
    let back = parse_report_csv(&csv).unwrap();
    let rounded: BTreeMap<_, _> = r.scores.iter().map(|(k, v)| (k.clone(), (v * 100.0).round() / 100.0)).collect();
    assert_eq!(back, rounded);
}

#[test]
fn failed_cells_are_recorded_and_the_rest_continue() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = Manifest::default();
    for mut c in load_source(&CorpusSource::Replica { seed: 1 }).unwrap() {
        let code = c.pair.target.clone();
        if !["en", "pt", "aym", "bzd"].contains(&code.as_str()) {
            continue;
        }
        if code == "bzd" {
            // Far past max_seq_len, so every bzd row is dropped.
            for r in &mut c.rows {
                r.target = r.target.repeat(12);
            }
        }
        let mut entry = ManifestEntry::new(&code);
        for split in Split::ALL {
            let (s, t) = (dir.path().join(format!("{code}.{split}.es")), dir.path().join(format!("{code}.{split}.tgt")));
            c.write_split(split, &s, &t).unwrap();
            entry.files.insert(split, SplitSource::TwoFile { source: s, target: t });
        }
        manifest.entries.push(entry);
    }
    let m = dir.path().join("manifest.txt");
    std::fs::write(&m, manifest.to_text(dir.path())).unwrap();
    let text = TINY.replace("corpus = replica", &format!("corpus = {}\npairs = aym,bzd", m.display()));
    let p = ExperimentPlan::parse(&text, "tiny.plan", Path::new(".")).unwrap();
    let r = run_experiment(&p, &dir.path().join("run")).unwrap();

    let failed: Vec<_> = r.failed.keys().cloned().collect();
    let want: Vec<_> = ["A", "B"]
        .iter()
        .flat_map(|s| [Split::Dev, Split::Test].map(|sp| (s.to_string(), "bzd".to_string(), sp)))
        .collect();
    assert_eq!(failed.len(), 4);
    for k in &want {
        assert!(r.failed[k].contains("seed 1"), "{}", r.failed[k]);
        assert!(!r.scores.contains_key(k));
    }
    assert_eq!(r.scores.len(), 4);
    assert!(r.scores.keys().all(|k| k.1 == "aym"));
    let text = render_report(&r, ReportFormat::TextTable);
    assert!(text.contains("failed"), "{text}");
    let b = text.lines().find(|l| l.contains(" B ")).unwrap();
    assert!(b.split_whitespace().any(|c| c == "-"), "{b}");
}

#[test]
fn corpus_errors_name_the_pair() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.txt");
    std::fs::write(
        &m,
        "[aym]\nsource = es\ntrain.src = missing.es\ntrain.tgt = missing.aym\ndev.src = missing.es\ndev.tgt = missing.aym\ntest.src = missing.es\ntest.tgt = missing.aym\n",
    )
    .unwrap();
    let text = TINY.replace("corpus = replica", &format!("corpus = {}", m.display()));
    let p = ExperimentPlan::parse(&text, "tiny.plan", Path::new(".")).unwrap();
    let e = run_experiment(&p, &dir.path().join("run")).unwrap_err();
    assert_eq!(e.kind(), "corpus");
    assert!(e.to_string().contains("aym"), "{e}");
}

fn mtlab(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_mtlab")).args(args).output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

#[test]
fn cli_usage_and_errors() {
    let (code, _, err) = mtlab(&["frobnicate"]);
    assert_eq!(code, 2);
    assert!(err.contains("Usage"), "{err}");
    let (code, _, err) = mtlab(&["stats", "--bogus"]);
    assert_eq!(code, 2);
    assert!(err.contains("Usage"), "{err}");
    let (code, out, _) = mtlab(&["--help"]);
    assert_eq!(code, 0);
    for sub in ["gen-data", "pretrain", "finetune", "evaluate", "experiment", "report", "stats"] {
        assert!(out.contains(sub), "{sub}");
    }
    let (code, _, err) = mtlab(&["report", "--experiment", "/nonexistent/run"]);
    assert_eq!(code, 1);
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error: io: "), "{err}");
}

#[test]
fn cli_evaluate_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let h = dir.path().join("h.txt");
    let r = dir.path().join("r.txt");
    std::fs::write(&h, "ab\n").unwrap();
    std::fs::write(&r, "abc\n").unwrap();
    let (code, out, _) = mtlab(&["evaluate", "--hyp", h.to_str().unwrap(), "--ref", r.to_str().unwrap()]);
    assert_eq!(code, 0);
    let v: f64 = out.trim().parse().unwrap();
    assert_eq!(out.lines().count(), 1);
    assert!(v > 0.0 && v < 100.0);

    let (code, out, _) = mtlab(&["stats"]);
    assert_eq!(code, 0);
    assert!(out.lines().next().unwrap().split_whitespace().eq(["Language", "ISO", "Family", "Train", "Dev", "Test"]));
    assert!(out.contains("410,000"));

    let data = dir.path().join("data");
    let (code, _, err) = mtlab(&["gen-data", "--seed", "3", "--out", data.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let manifest = data.join("manifest.txt");
    let table = dir.path().join("stats.txt");
    let (code, _, _) = mtlab(&["stats", "--manifest", manifest.to_str().unwrap(), "--out", table.to_str().unwrap()]);
    assert_eq!(code, 0);
    let (_, replica, _) = mtlab(&["stats", "--manifest", "replica", "--seed", "3"]);
    let written = std::fs::read_to_string(&table).unwrap();
    // Same counts whether read back from disk or generated in memory.
    let counts = |t: &str| -> Vec<String> {
        t.lines().map(|l| l.split_whitespace().rev().take(3).collect::<Vec<_>>().join(" ")).collect()
    };
    assert_eq!(counts(&written), counts(&replica));
}

#[test]
fn cli_config_file_is_checked() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.txt");
    std::fs::write(&cfg, "epochs = 1\nwarmup = 4\n").unwrap();
    let (code, _, err) = mtlab(&["pretrain", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.starts_with("error: config: "), "{err}");
    assert!(err.contains(":2:"), "{err}");
}

#[test]
fn cli_pretrain_finetune_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = |p: &str| dir.path().join(p).to_str().unwrap().to_string();
    mtlab(&["gen-data", "--out", &d("data")]);
    std::fs::write(
        d("small.txt"),
        "epochs = 1\nlearning_rate = 0.003\n[model]\nnum_layers = 1\nnum_heads = 2\nd_model = 16\nd_ff = 32\nmax_seq_len = 48\n",
    )
    .unwrap();
    let manifest = d("data/manifest.txt");
    let (code, out, err) = mtlab(&[
        "pretrain", "--kind", "bilingual", "--pairs", "czn", "--manifest", &manifest, "--config", &d("small.txt"), "--out", &d("base"),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("epoch=1"));
    std::fs::write(d("ft.txt"), "epochs = 1\n").unwrap();
    let (code, _, err) = mtlab(&[
        "finetune", "--base", &d("base"), "--pair", "czn", "--manifest", &manifest, "--config", &d("ft.txt"), "--out", &d("ft"),
    ]);
    assert_eq!(code, 0, "{err}");
    let (code, out, err) = mtlab(&[
        "evaluate", "--model", &d("ft"), "--pair", "czn", "--split", "dev", "--manifest", &manifest, "--out", &d("hyp.txt"),
    ]);
    assert_eq!(code, 0, "{err}");
    let score: f64 = out.trim().parse().unwrap();
    assert_eq!(std::fs::read_to_string(d("hyp.txt")).unwrap().lines().count(), 100);
    // The printed score is the scorer applied to the written hypotheses.
    let (_, again, _) = mtlab(&["evaluate", "--hyp", &d("hyp.txt"), "--ref", &d("data/czn/dev.czn")]);
    assert_eq!(again.trim().parse::<f64>().unwrap(), score);
}

#[test]
fn cli_experiment_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("p.plan");
    std::fs::write(&plan, REPLICA_SMOKE_PLAN).unwrap();
    let run = dir.path().join("run");
    let (code, _, err) = mtlab(&["experiment", "--plan", plan.to_str().unwrap(), "--out", run.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let (code, text, _) = mtlab(&["report", "--experiment", run.to_str().unwrap(), "--format", "text-table"]);
    assert_eq!(code, 0);
    assert!(text.contains("Average"));
    assert!(text.lines().any(|l| l.starts_with("Dev ")));
    assert!(text.lines().any(|l| l.starts_with("Test ")));
    let csv_path = dir.path().join("r.csv");
    let (code, _, _) = mtlab(&["report", "--experiment", run.to_str().unwrap(), "--format", "csv", "--out", csv_path.to_str().unwrap()]);
    assert_eq!(code, 0);
    let csv = std::fs::read_to_string(csv_path).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "Data,Model,quy,aym,bzd,cni,shp,czn,Average");
    assert_eq!(parse_report_csv(&csv).unwrap().len(), 60);
}
