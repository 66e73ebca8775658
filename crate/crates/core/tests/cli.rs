use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use adobi::cli::{CONFIG_FILE, GAMMA_GRID};
use adobi::config::{ExperimentConfig, Method};
use adobi::experiment::{fit_oracle_denoiser, run_method, simulate_case, Case};
use adobi::forward::ForwardOperator;
use adobi::mrid::{self, MridObject};

fn adobi(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adobi"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) {
    let out = adobi(args, cwd);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

const SMALL: &[&str] = &["--set", "size=32", "--set", "n_coils=4", "--train-count", "16"];

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(SMALL);
    v
}

#[test]
fn simulate_echoes_config_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    let text = "# my run\nacceleration = 1\nnoise-level=0\nsize = 32\n\nn_coils = 4\n";
    fs::write(cwd.join("in.txt"), text).unwrap();
    ok(&["simulate", "--config", "in.txt", "--out", "a"], cwd);
    ok(&["simulate", "--config", "in.txt", "--out", "b"], cwd);
    assert_eq!(fs::read_to_string(cwd.join("a/config_input.txt")).unwrap(), text);
    assert_eq!(fs::read(cwd.join("a/kspace.mrid")).unwrap(), fs::read(cwd.join("b/kspace.mrid")).unwrap());
    let effective = ExperimentConfig::from_text(&fs::read_to_string(cwd.join("a").join(CONFIG_FILE)).unwrap()).unwrap();
    assert_eq!(effective.acceleration, 1);

    let case = Case::load(&cwd.join("a"), 0).unwrap();
    let op = ForwardOperator::new(case.true_maps.clone(), case.mask.clone()).unwrap();
    let back = op.adjoint(&case.kspace).unwrap();
    let err = back.sub(&case.image).unwrap().max_abs();
    assert!(err < 1e-6, "full-sampling adjoint error {err}");
}

#[test]
fn reconstruct_traces_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    ok(&with_small(&["simulate", "--out", "sim", "--seed", "3"]), cwd);
    ok(&with_small(&["reconstruct", "--input", "sim", "--out", "zf", "--method", "zf"]), cwd);
    let zf_trace = fs::read_to_string(cwd.join("zf/trace.csv")).unwrap();
    assert_eq!(zf_trace.lines().count(), 1);

    for out in ["r1", "r2"] {
        ok(&with_small(&["reconstruct", "--input", "sim", "--out", out, "--method", "adobi", "--nfe", "10", "--seed", "3"]), cwd);
    }
    let trace = fs::read_to_string(cwd.join("r1/trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 11);
    for f in ["recon.mrid", "final_maps.mrid", "trace.csv", "manifest.txt"] {
        assert_eq!(fs::read(cwd.join("r1").join(f)).unwrap(), fs::read(cwd.join("r2").join(f)).unwrap(), "{f}");
    }

    ok(&with_small(&["reconstruct", "--input", "sim", "--out", "ens", "--nfe", "3", "--samples", "3", "--seed", "3"]), cwd);
    assert!(cwd.join("ens/std.mrid").exists() && cwd.join("ens/mean.mrid").exists());
}

#[test]
fn adobi_fits_the_data_better_than_cddb() {
    let base = ExperimentConfig { size: 32, n_coils: 4, train_count: 32, nfe: 10, ..Default::default() };
    let den = fit_oracle_denoiser(&base).unwrap();
    let mut wins = 0;
    for seed in 0..20 {
        let case = simulate_case(&base, seed).unwrap();
        let res = |method| {
            let cfg = ExperimentConfig { method, ..base.clone() };
            run_method(&case, &cfg, Some(&den)).unwrap().trace.unwrap().steps.last().unwrap().data_residual
        };
        if res(Method::Adobi) < res(Method::Cddb) {
            wins += 1;
        }
    }
    assert!(wins >= 16, "adobi smaller final residual on {wins}/20 seeds");
}

#[test]
fn evaluate_exact_match_and_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    ok(&with_small(&["simulate", "--out", "sim"]), cwd);
    ok(&with_small(&["reconstruct", "--input", "sim", "--out", "zf", "--method", "zf"]), cwd);
    let case = Case::load(&cwd.join("sim"), 0).unwrap();

    fs::create_dir_all(cwd.join("perfect")).unwrap();
    mrid::save_array(cwd.join("perfect/recon.mrid"), &MridObject::Image(case.image.clone())).unwrap();
    mrid::save_array(cwd.join("perfect/final_maps.mrid"), &MridObject::Maps(case.true_maps.clone())).unwrap();
    fs::write(cwd.join("perfect/config.txt"), "method = cddb\n").unwrap();
    fs::write(cwd.join("perfect/manifest.txt"), "command = reconstruct\n").unwrap();

    ok(&["evaluate", "--recon", "perfect", "--recon", "zf", "--truth", "sim", "--out", "ev", "--dump"], cwd);
    let per_slice = fs::read_to_string(cwd.join("ev/per_slice.csv")).unwrap();
    let row: Vec<&str> = per_slice.lines().nth(2).unwrap().split(',').collect();
    assert_eq!(row[0], "cddb");
    assert_eq!(row[2], "inf");
    assert_eq!(row[3].parse::<f64>().unwrap(), 1.0);
    let summary = fs::read_to_string(cwd.join("ev/summary.csv")).unwrap();
    for m in ["cddb,psnr", "zf,psnr"] {
        assert!(summary.contains(m), "{summary}");
    }

    let recon = mrid::load_image(cwd.join("zf/recon.mrid")).unwrap();
    let err: Vec<f64> = recon.magnitude().iter().zip(case.image.magnitude()).map(|(a, b)| (a - b).abs()).collect();
    let argmax = (0..err.len()).max_by(|&a, &b| err[a].partial_cmp(&err[b]).unwrap()).unwrap();
    let pgm = fs::read(cwd.join("ev/01-zf-seed0-error.pgm")).unwrap();
    let header = b"P5\n32 32\n255\n";
    assert_eq!(&pgm[..header.len()], header);
    let pixels = &pgm[header.len()..];
    assert_eq!(pixels.len(), 32 * 32);
    assert_eq!(pixels[argmax], 255);
}

#[test]
fn sweep_rows_and_nfe_trend() {
    assert!(GAMMA_GRID.contains(&2.4));
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    ok(
        &with_small(&[
            "sweep", "--axis", "nfe", "--values", "1,2,5,10", "--seeds", "6", "--method", "cddb", "--maps", "true",
            "--noise-mode", "ode", "--out", "sw",
        ]),
        cwd,
    );
    let csv = fs::read_to_string(cwd.join("sw/sweep.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4 * 6);
    assert!(cwd.join("sw/nfe_5/seed_2/recon.mrid").exists());

    let xs: Vec<f64> = rows.iter().filter(|r| r[1] != "10").map(|r| r[1].parse().unwrap()).collect();
    let ys: Vec<f64> = rows.iter().filter(|r| r[1] != "10").map(|r| r[4].parse().unwrap()).collect();
    assert!(spearman(&xs, &ys) > 0.0);
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for k in i..=j {
            r[idx[k]] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    adobi::metrics::pearson(&ranks(a), &ranks(b)).unwrap()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    assert_eq!(adobi(&["frobnicate"], cwd).status.code(), Some(1));
    assert_eq!(adobi(&["simulate", "--nfe", "ten"], cwd).status.code(), Some(1));
    assert_eq!(adobi(&["simulate", "--set", "no_such_key=1"], cwd).status.code(), Some(1));
    assert_eq!(adobi(&["sweep", "--axis", "beta"], cwd).status.code(), Some(1));
    assert_eq!(adobi(&["sweep", "--axis", "gamma", "--values", "1.0"], cwd).status.code(), Some(1));
    assert_eq!(adobi(&["reconstruct", "--input", "missing", "--method", "zf"], cwd).status.code(), Some(2));
    assert_eq!(adobi(&["--help"], cwd).status.code(), Some(0));
}

#[test]
fn trained_ridge_denoiser_is_usable() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    ok(&with_small(&["train-denoiser", "--out", "den", "--set", "ridge_bins=4", "--set", "patch_radius=1"]), cwd);
    let d = mrid::load_ridge(cwd.join("den/denoiser.mrid")).unwrap();
    assert_eq!(d.bins().len(), 4);
    ok(&with_small(&["simulate", "--out", "sim"]), cwd);
    ok(&with_small(&["reconstruct", "--input", "sim", "--out", "rec", "--nfe", "4", "--denoiser", "ridge:den/denoiser.mrid"]), cwd);
    assert_eq!(fs::read_to_string(cwd.join("rec/trace.csv")).unwrap().lines().count(), 5);
}

#[test]
fn calibrate_writes_maps_and_init() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    ok(&with_small(&["simulate", "--out", "sim"]), cwd);
    ok(&with_small(&["calibrate", "--input", "sim", "--out", "cal", "--init", "grappa", "--maps", "estimated"]), cwd);
    let maps = mrid::load_maps(cwd.join("cal/estimated_maps.mrid")).unwrap();
    assert_eq!(maps.n_coils(), 4);
    assert!(mrid::load_image(cwd.join("cal/init.mrid")).unwrap().is_finite());
}
