use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use stdk_core::gridstack::GridStack;

const STAGES: [&str; 5] = ["ingest", "train-interp", "interpolate", "train-forecast", "forecast"];

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/tiny")
}

fn stdk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stdk"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn stdk")
}

fn run(config: &Path, out: &Path, cmd: &str) -> Output {
    stdk(&["--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), cmd])
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Output directory of one full run over the tiny fixture, shared by every
/// test that only reads it.
fn shared_run() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let out = Path::new(env!("CARGO_TARGET_TMPDIR")).join("pipeline-shared");
        let _ = fs::remove_dir_all(&out);
        for stage in STAGES {
            let o = run(&fixture().join("config.toml"), &out, stage);
            assert_eq!(code(&o), 0, "{stage}: {}", stderr(&o));
        }
        out
    })
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        fs::copy(entry.path(), to.join(entry.file_name())).unwrap();
    }
}

fn flip_byte(path: &Path, pos: usize) {
    let mut bytes = fs::read(path).unwrap();
    let pos = pos % bytes.len();
    bytes[pos] ^= 0x01;
    fs::write(path, bytes).unwrap();
}

#[test]
fn missing_station_file_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.toml");
    let text = fs::read_to_string(fixture().join("config.toml")).unwrap();
    fs::write(&config, text.replace("\"stations.csv\"", "\"nowhere.csv\"")).unwrap();
    let o = run(&config, &dir.path().join("out"), "ingest");
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("nowhere.csv"), "{}", stderr(&o));
}

#[test]
fn missing_config_or_upstream_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&dir.path().join("absent.toml"), dir.path(), "ingest");
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("absent.toml"));

    let o = run(&fixture().join("config.toml"), &dir.path().join("empty"), "train-interp");
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("ingest.meta"), "{}", stderr(&o));

    let o = stdk(&["--out", dir.path().to_str().unwrap(), "evaluate"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn edited_config_is_rejected_downstream() {
    let dir = tempfile::tempdir().unwrap();
    copy_dir(&fixture(), dir.path());
    let config = dir.path().join("config.toml");
    let out = dir.path().join("out");
    assert_eq!(code(&run(&config, &out, "ingest")), 0);
    let original = fs::read(&config).unwrap();

    let mut provenance_failures = 0;
    for pos in (0..original.len()).step_by(37) {
        fs::write(&config, &original).unwrap();
        flip_byte(&config, pos);
        let o = run(&config, &out, "train-interp");
        let c = code(&o);
        assert!(c == 3 || c == 1, "flip at {pos} gave exit {c}: {}", stderr(&o));
        provenance_failures += usize::from(c == 3);
    }
    assert!(provenance_failures > 0);

    fs::write(&config, &original).unwrap();
    let o = stdk(&["--config", config.to_str().unwrap(), "--seed", "8", "--out", out.to_str().unwrap(), "train-interp"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn tampered_checkpoints_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    copy_dir(shared_run(), dir.path());
    let config = fixture().join("config.toml");
    flip_byte(&dir.path().join("interp.ckpt"), 1000);
    let o = run(&config, dir.path(), "interpolate");
    assert_eq!(code(&o), 3, "{}", stderr(&o));

    flip_byte(&dir.path().join("forecast.ckpt"), 999);
    let o = run(&config, dir.path(), "forecast");
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn forecast_stack_holds_three_ordered_channels() {
    let stack = GridStack::load(shared_run().join("forecast.grds")).unwrap();
    assert_eq!((stack.channels, stack.h, stack.w), (3, 8, 8));
    assert!(stack.t >= 1);
    assert!(stack.provenance.contains("config_hash="));
    for t in 0..stack.t {
        let [lo, mid, hi] = [0, 1, 2].map(|c| stack.frame(t, c).unwrap());
        for p in 0..stack.plane() {
            assert!(lo[p] <= mid[p] && mid[p] <= hi[p]);
        }
    }
    let truth = GridStack::load(shared_run().join("forecast_truth.grds")).unwrap();
    assert_eq!((truth.channels, truth.t, truth.h, truth.w), (1, stack.t, 8, 8));
}

#[test]
fn evaluating_a_stack_against_itself_is_exact() {
    let stack = shared_run().join("forecast.grds");
    let dir = tempfile::tempdir().unwrap();
    let s = stack.to_str().unwrap();
    let o = stdk(&["--out", dir.path().to_str().unwrap(), "evaluate", "--truth", s, "--pred", s]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("eval.csv")).unwrap();
    let row: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(row[1], 0.0);
    assert_eq!(row[2], 1.0);
}

#[test]
fn evaluate_shape_mismatch_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.grds");
    let b = dir.path().join("b.grds");
    GridStack::new(1, 2, 3, 3, vec![0.0; 18]).unwrap().save(&a).unwrap();
    GridStack::new(3, 2, 3, 4, vec![0.0; 72]).unwrap().save(&b).unwrap();
    let o = stdk(&[
        "--out",
        dir.path().to_str().unwrap(),
        "evaluate",
        "--truth",
        a.to_str().unwrap(),
        "--pred",
        b.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

fn decode(path: &Path) -> (u32, u32, Vec<[u8; 3]>) {
    let decoder = png::Decoder::new(fs::File::open(path).unwrap());
    let mut reader = decoder.read_info().unwrap();
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).unwrap();
    let px = buf[..info.buffer_size()].chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
    (info.width, info.height, px)
}

fn render(dir: &Path, stack: &Path, extra: &[&str]) -> Output {
    let png = dir.join("r.png");
    let mut args = vec![
        "--out",
        dir.to_str().unwrap(),
        "render",
        "--stack",
        stack.to_str().unwrap(),
        "--png",
        png.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    stdk(&args)
}

#[test]
fn render_draws_north_up_with_grey_missing_cells() {
    let dir = tempfile::tempdir().unwrap();
    let (h, w) = (4, 5);
    let mut data: Vec<f64> = (0..h * w).map(|i| i as f64).collect();
    data[0] = f64::NAN; // south-west corner
    let stack = dir.path().join("s.grds");
    GridStack::new(1, 1, h, w, data).unwrap().save(&stack).unwrap();

    let o = render(dir.path(), &stack, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (pw, ph, px) = decode(&dir.path().join("r.png"));
    assert_eq!((pw, ph), (w as u32, h as u32));
    assert_eq!(px[(h - 1) * w], [128, 128, 128]);
    // Largest value is the north-east corner, drawn top right.
    assert_eq!(px[w - 1], [253, 231, 37]);
    assert_eq!(px.iter().filter(|&&p| p == [128, 128, 128]).count(), 1);

    let o = render(dir.path(), &stack, &["--time", "1"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn render_constant_field_is_one_colour() {
    let dir = tempfile::tempdir().unwrap();
    let stack = dir.path().join("c.grds");
    GridStack::new(3, 2, 3, 3, vec![1.5; 54]).unwrap().save(&stack).unwrap();
    let o = render(dir.path(), &stack, &["--time", "1", "--triptych"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (pw, ph, px) = decode(&dir.path().join("r.png"));
    assert_eq!((pw, ph), (9, 3));
    assert!(px.iter().all(|&p| p == px[0]));
}

#[test]
fn shared_run_renders_triptych() {
    let dir = tempfile::tempdir().unwrap();
    let o = render(dir.path(), &shared_run().join("forecast.grds"), &["--triptych", "--palette", "greys"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (pw, ph, _) = decode(&dir.path().join("r.png"));
    assert_eq!((pw, ph), (24, 8));
}
