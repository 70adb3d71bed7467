use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;

use pspo_core::data::OfflineDataset;
use pspo_core::CategoricalEnsemble;
use pspo_harness::config::ExperimentConfig;
use pspo_harness::format::read_json;
use pspo_harness::pipeline::{self, iterations_file, Coverage, RunManifest, EVAL_HEADER, ITERATION_HEADER};
use pspo_harness::plots::{CURVES_HEADER, SCATTER_HEADER};

fn tabular(out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::tabular_default();
    c.out = out.to_path_buf();
    c
}

fn first_line(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn csv_headers_are_stable() {
    assert_eq!(
        ITERATION_HEADER.join(","),
        "iteration,variant,seed,mean_target,target_variance,variance_bound,regularized_return,return_before,\
         return_after,true_return,kl_step,kl_max,lambda,condition_holds,condition_lhs,condition_rhs,improved,\
         uncertainty_td_corr,posterior_entropy,posterior_max"
    );
    assert_eq!(EVAL_HEADER.join(","), "policy,variant,seed,mean_return,std_return,normalized_score");
    assert_eq!(CURVES_HEADER.join(","), "iteration,metric,value,seed,variant");
    assert_eq!(SCATTER_HEADER.join(","), "uncertainty,td_target");
}

#[test]
fn tabular_pipeline_writes_one_row_per_iteration_and_covers_every_pair() {
    let dir = tempfile::tempdir().unwrap();
    let config = tabular(dir.path());
    let m = pipeline::run_all(&config).unwrap();
    let coverage: Coverage = read_json(&dir.path().join(pipeline::COVERAGE)).unwrap();
    assert_eq!(coverage.visited_pairs, coverage.total_pairs);
    assert_eq!(coverage.records, 10_000);
    for &k in &config.train_seeds {
        let path = dir.path().join(iterations_file("full", k));
        assert_eq!(first_line(&path), ITERATION_HEADER.join(","));
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 1 + 50);
    }
    assert_eq!(first_line(&dir.path().join(pipeline::EVAL)), EVAL_HEADER.join(","));
    assert!(m.checks.values().all(|&ok| ok));
    assert!(["gen_data", "train_dynamics", "train_pspo", "eval"].iter().all(|p| m.timings.contains_key(*p)));
}

#[test]
fn tabular_members_stay_close_to_empirical_frequencies() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tabular(dir.path());
    // Bootstrap L1 error per row is about Σ_s' sqrt(2 p (1 − p) / (π n)):
    // ≈ 0.06 at n ≈ 670 records per pair, ≈ 0.02 at n ≈ 6,700.
    config.tabular.n_records = 100_000;
    pipeline::gen_data(&config).unwrap();
    pipeline::train_dynamics(&config).unwrap();
    let data: OfflineDataset<usize> = pipeline::read_dataset(&dir.path().join(pipeline::DATASET)).unwrap();
    let ens: CategoricalEnsemble = read_json(&dir.path().join(pipeline::ENSEMBLE)).unwrap();
    let (ns, na) = (config.tabular.n_states, config.tabular.n_actions);
    let mut counts = vec![0.0; ns * na * ns];
    for r in data.records() {
        counts[(r.s * na + r.a) * ns + r.s2] += 1.0;
    }
    for m in ens.members() {
        for s in 0..ns {
            for a in 0..na {
                let row = &counts[(s * na + a) * ns..(s * na + a + 1) * ns];
                let n: f64 = row.iter().sum();
                let l1: f64 = row.iter().zip(m.next_row(s, a)).map(|(c, p)| (c / n - p).abs()).sum();
                assert!(l1 < 0.1, "({s},{a}): {l1}");
            }
        }
    }
}

#[test]
fn single_member_ensemble() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tabular(dir.path());
    config.pspo.ensemble_size = 1;
    config.pspo.model_pool_size = 1;
    pipeline::gen_data(&config).unwrap();
    pipeline::train_dynamics(&config).unwrap();
    let ens: CategoricalEnsemble = read_json(&dir.path().join(pipeline::ENSEMBLE)).unwrap();
    assert_eq!(ens.len(), 1);
}

#[test]
fn manifest_reconstructs_the_run() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let first = pipeline::run_all(&tabular(dirs[0].path())).unwrap();
    let saved: RunManifest = read_json(&dirs[0].path().join(pipeline::MANIFEST)).unwrap();
    assert_eq!(saved, first);
    let mut config = saved.config.clone();
    config.out = dirs[1].path().to_path_buf();
    let second = pipeline::run_all(&config).unwrap();
    assert_eq!(first.artifacts, second.artifacts);
}

#[test]
fn ablation_variants_are_tagged() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tabular(dir.path());
    config.train_seeds = vec![0];
    config.pspo.iterations = 5;
    pipeline::gen_data(&config).unwrap();
    pipeline::train_dynamics(&config).unwrap();
    pipeline::ablate(&config).unwrap();
    for v in pipeline::VARIANTS {
        let text = std::fs::read_to_string(dir.path().join(iterations_file(v, 0))).unwrap();
        assert!(text.lines().skip(1).all(|l| l.split(',').nth(1) == Some(v)));
    }
    let ablation = std::fs::read_to_string(dir.path().join(pipeline::ABLATION)).unwrap();
    assert_eq!(ablation.lines().count(), 1 + 3);
    assert!(pipeline::train_pspo(&config, "bogus").is_err());
}

fn pspo() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pspo"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("c.toml");
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let good = write_config(dir.path(), "name = \"t\"\ntrack = \"tabular\"\nseed = 1\n[pspo]\niterations = 3\n");
    let status = |args: &[&str]| pspo().args(args).arg("--out").arg(&out).status().unwrap().code();
    let cfg = good.to_str().unwrap();

    assert_eq!(status(&["train-dynamics", "--config", cfg]), Some(3), "missing dataset is a runtime error");
    assert_eq!(status(&["gen-data", "--config", cfg]), Some(0));
    assert_eq!(status(&["check", "--config", cfg, "--suite", "nope"]), Some(2));
    assert_eq!(status(&["check", "--config", cfg, "--suite", "closed_form,ou"]), Some(0));
    assert_eq!(status(&["gen-data", "--config", "/nonexistent.toml"]), Some(2));
    assert_eq!(pspo().arg("frobnicate").status().unwrap().code(), Some(2));

    let bad = write_config(dir.path(), "name = \"t\"\ntrack = \"tabular\"\nseed = 1\n[pspo]\ngamma = 1.5\n");
    assert_eq!(status(&["gen-data", "--config", bad.to_str().unwrap()]), Some(2));
    let overridden =
        pspo().args(["gen-data", "--config", cfg, "--out"]).arg(&out).env("PSPO__GAMMA", "2").status().unwrap().code();
    assert_eq!(overridden, Some(2));
}

#[test]
fn cli_pipeline_and_plot_export() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_config(dir.path(), "name = \"t\"\ntrack = \"tabular\"\nseed = 2\n[pspo]\niterations = 4\n");
    for cmd in ["gen-data", "train-dynamics", "train-pspo", "eval"] {
        let ok = pspo().args([cmd, "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
        assert!(ok.status.success(), "{cmd}: {}", String::from_utf8_lossy(&ok.stderr));
    }
    let csvs: Vec<_> = (0..4).map(|k| out.join(iterations_file("full", k))).collect();
    let plots = dir.path().join("plots");
    let status = pspo()
        .arg("export-plots")
        .args(&csvs)
        .arg("--out")
        .arg(&plots)
        .args(["--metrics", "kl_max,true_return"])
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(plots.join("curves.csv")).unwrap();
    let seeds: BTreeSet<&str> = text.lines().skip(1).map(|l| l.split(',').nth(3).unwrap()).collect();
    assert_eq!(seeds.len(), 4);
    assert_eq!(text.lines().count(), 1 + 4 * 4 * 2);

    let empty =
        pspo().arg("export-plots").args(&csvs).arg("--out").arg(&plots).args(["--metrics", ""]).output().unwrap();
    assert_eq!(empty.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&empty.stderr).contains("available metrics"));
}

#[test]
fn seed_flag_changes_the_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "name = \"t\"\ntrack = \"tabular\"\nseed = 2\n");
    let hash = |seed: &str, sub: &str| {
        let out = dir.path().join(sub);
        assert!(pspo()
            .args(["gen-data", "--config"])
            .arg(&cfg)
            .args(["--seed", seed, "--out"])
            .arg(&out)
            .status()
            .unwrap()
            .success());
        let m: RunManifest = read_json(&out.join(pipeline::MANIFEST)).unwrap();
        m.artifacts[pipeline::DATASET].clone()
    };
    assert_eq!(hash("5", "a"), hash("5", "b"));
    assert_ne!(hash("5", "a"), hash("6", "c"));
}
