use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const FAST: &str = r#"
version = 1

[instrument]
na = 0.5
magnification = 20.0
working_distance = 2.0
detector_side = 0.16
pixels = 8
lens_model = "ideal"
collector_ratio = 0.5

[render]
n_rays = 20000
seed = 3

[[materials]]
type = "hg_surface"
g = 0.8

[[objects]]
kind = "plane"
point = { x = 0.0, y = 0.0, z = 0.0 }
normal = { x = 0.0, y = 0.0, z = 1.0 }
material = 0
"#;

fn fvsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fvsim")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(sub: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![sub, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    fvsim(&args)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_accepts_shipped_configs() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    for name in ["render_flat.toml", "sweep_plateau.toml", "measure_step.toml"] {
        let o = fvsim(&["validate", "--config", dir.join(name).to_str().unwrap()]);
        assert!(o.status.success(), "{name}: {}", stderr(&o));
    }
}

#[test]
fn render_writes_image_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "fast.toml", FAST);
    let out = dir.path().join("out");
    let o = run("render", &cfg, &out, &["--threads", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("rays/s"));
    assert!(out.join("image.png").exists());
    let stats = std::fs::read_to_string(out.join("stats.json")).unwrap();
    assert!(stats.contains("\"census_balanced\": true"));
    assert!(stats.contains("\"rays_emitted\": 20000"));
    let side = std::fs::read_to_string(out.join("image.json")).unwrap();
    assert!(side.contains("\"seed\": 3"));
    assert!(side.contains("config_sha256"));
}

#[test]
fn seed_override_reaches_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "fast.toml", FAST);
    let out = dir.path().join("out");
    assert!(run("render", &cfg, &out, &["--seed", "99"]).status.success());
    let side = std::fs::read_to_string(out.join("image.json")).unwrap();
    assert!(side.contains("\"seed\": 99"));
}

#[test]
fn missing_stl_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{FAST}\n[[objects]]\nkind = \"stl\"\npath = \"nowhere/part.stl\"\nmaterial = 0\n");
    let cfg = write_config(dir.path(), "bad.toml", &text);
    let o = run("render", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("objects[1].path") && err.contains("part.stl"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn bad_arguments_exit_one() {
    assert_eq!(fvsim(&["render"]).status.code(), Some(1));
    assert_eq!(fvsim(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(fvsim(&["validate", "--config", "/no/such/file.toml"]).status.code(), Some(2));
    assert!(fvsim(&["--help"]).status.success());
}

#[test]
fn sweep_grid_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{FAST}\n[sweep]\nn_rays = [10000, 40000]\ng = [0.3, 1.0]\n");
    let cfg = write_config(dir.path(), "sweep.toml", &text);
    let out = dir.path().join("out");
    let o = run("sweep", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let pngs = std::fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png")).count();
    assert_eq!(pngs, 4);
    let report = std::fs::read_to_string(out.join("sweep_report.json")).unwrap();
    assert!(report.contains("noise_summary"));
}

#[test]
fn measure_without_reference_still_exports() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{FAST}\n[scan]\nz_start = -0.1\nz_end = 0.1\ndelta_z = 0.05\nrays_per_image = 5000\n\n[reconstruction]\nwindow = 3\n");
    let cfg = write_config(dir.path(), "measure.toml", &text);
    let out = dir.path().join("out");
    let o = run("measure", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("notice"));
    assert!(out.join("topography.txt").exists());
    assert!(out.join("stack/img_0004.png").exists());
    let manifest = std::fs::read_to_string(out.join("stack/manifest.txt")).unwrap();
    assert_eq!(manifest.lines().filter(|l| !l.starts_with('#')).count(), 5);
}

#[test]
fn psf_post_processing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "fast.toml", FAST);
    let render_out = dir.path().join("render");
    assert!(run("render", &cfg, &render_out, &[]).status.success());
    let text = format!("{FAST}\n[psf]\ngaussian_sigma = 1.0\ninput = \"render/image.png\"\n");
    let cfg = write_config(dir.path(), "psf.toml", &text);
    let out = dir.path().join("psf");
    let o = run("psf", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let sum = |p: PathBuf| -> f64 {
        std::fs::read_to_string(p).unwrap().split_whitespace().map(|t| t.parse::<f64>().unwrap()).sum()
    };
    let before = sum(render_out.join("counts.txt"));
    let after = sum(out.join("psf_counts.txt"));
    assert!((before - after).abs() <= 1e-6 * before.max(1.0));
}

#[test]
fn corrupt_psf_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("broken.png"), b"not a png").unwrap();
    std::fs::write(dir.path().join("broken.json"), b"{}").unwrap();
    let text = format!("{FAST}\n[psf]\ngaussian_sigma = 1.0\ninput = \"broken.png\"\n");
    let cfg = write_config(dir.path(), "psf.toml", &text);
    let o = run("psf", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
