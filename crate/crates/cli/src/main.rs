use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use serde_json::{json, Value};

use ovseg3d::afi::{afi, AfiConfig, AfiInput};
use ovseg3d::classdict::ClassDictionary;
use ovseg3d::correspondence::Correspondence;
use ovseg3d::eval::{confusion, miou, Metrics};
use ovseg3d::io::{self, SceneBundle, Teacher};
use ovseg3d::pipeline::{run_pipeline, PipelineConfig};
use ovseg3d::projection::{assign_masks, fov_mask, project_all, pseudo_labels};
use ovseg3d::render::render_svg;
use ovseg3d::synth::{builtin_dictionary, generate_scene, generate_teacher, SynthSpec};
use ovseg3d::tmp::{predict_points, train_toy_head, TrainConfig};
use ovseg3d::{Error, LabelField};

#[derive(Parser)]
#[command(name = "ovseg3d", version, about = "Annotation-free 3D segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene, teacher output and class dictionary.
    Synth(SynthArgs),
    /// Project points into every camera and list the pixel hits.
    Project(ProjectArgs),
    /// Pseudo-labels from the teacher masks.
    Pseudo(SceneTeacherArgs),
    /// Superpixel/superpoint correspondence.
    Corr(CorrArgs),
    /// Train the toy projection head and predict point labels.
    Tmp(TmpArgs),
    /// Propagate labels with the flat-interaction network.
    Afi(AfiArgs),
    /// mIoU of a label field against ground truth.
    Eval(EvalArgs),
    /// Top-down SVG of one or more label fields.
    Render(RenderArgs),
    /// Run every stage on one scene.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Synthetic scene spec (JSON); defaults when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProjectArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SceneTeacherArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    teacher: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CorrArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    teacher: PathBuf,
    /// Group points by k-NN instead of by mask.
    #[arg(long)]
    no_superpoints: bool,
    /// Group size with --no-superpoints.
    #[arg(long, default_value_t = 16)]
    knn: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct TrainFlags {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = positive)]
    tau: Option<f64>,
    #[arg(long, value_parser = unit_interval)]
    alpha_image: Option<f64>,
    #[arg(long, value_parser = unit_interval)]
    alpha_text: Option<f64>,
    /// Drop the text-superpoint term.
    #[arg(long)]
    no_text_loss: bool,
    /// Group points by k-NN instead of by mask.
    #[arg(long)]
    no_superpoints: bool,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, value_parser = positive)]
    lr: Option<f64>,
}

impl TrainFlags {
    fn apply(&self, cfg: &mut TrainConfig, knn: Option<usize>) {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.tau {
            cfg.tau = v;
        }
        if let Some(v) = self.alpha_image {
            cfg.alpha_image = v;
        }
        if let Some(v) = self.alpha_text {
            cfg.alpha_text = v;
        }
        if self.no_text_loss {
            cfg.alpha_text = 0.0;
        }
        if self.no_superpoints {
            cfg.superpoints = false;
        }
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(k) = knn {
            cfg.knn = k;
        }
    }
}

#[derive(Args)]
struct TmpArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    teacher: PathBuf,
    #[arg(long)]
    dict: PathBuf,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long)]
    knn: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct AfiFlags {
    /// JSON file with AfiConfig fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = open_unit_interval_gamma)]
    gamma: Option<f64>,
    #[arg(long, value_parser = positive)]
    beta: Option<f64>,
    #[arg(long, value_parser = positive)]
    s_dist: Option<f64>,
    #[arg(long)]
    lattice_m: Option<usize>,
    /// Comma-separated keep ratios, one per layer.
    #[arg(long, value_delimiter = ',')]
    rates: Option<Vec<f64>>,
    #[arg(long)]
    knn_up: Option<usize>,
    /// Skip the distance-dependent pseudo-label replacement.
    #[arg(long)]
    no_coverage: bool,
}

impl AfiFlags {
    fn resolve(&self, seed: Option<u64>, knn: Option<usize>) -> Result<AfiConfig, Error> {
        let mut cfg: AfiConfig = match &self.config {
            Some(p) => io::read_json(p)?,
            None => AfiConfig::default(),
        };
        if let Some(v) = self.gamma {
            cfg.gamma = v;
        }
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(v) = self.s_dist {
            cfg.s_dist = v;
        }
        if let Some(v) = self.lattice_m {
            cfg.lattice_m = v;
        }
        if let Some(v) = &self.rates {
            cfg.rates = v.clone();
        }
        if let Some(v) = self.knn_up {
            cfg.knn_up = v;
        }
        if let Some(v) = knn {
            cfg.knn = v;
        }
        if let Some(v) = seed {
            cfg.seed = v;
        }
        if self.no_coverage {
            cfg.coverage_enabled = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct AfiArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    dict: PathBuf,
    /// Label field to propagate.
    #[arg(long)]
    labels: PathBuf,
    /// Pseudo-labels for the coverage step; required unless --no-coverage.
    #[arg(long)]
    pseudo: Option<PathBuf>,
    #[command(flatten)]
    afi: AfiFlags,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    knn: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Ground-truth label file.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    dict: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    dict: PathBuf,
    /// Label files; one SVG each, named after the file stem.
    #[arg(long, required = true, num_args = 1..)]
    labels: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
#[command(group(ArgGroup::new("input").required(true).args(["spec", "scene"])))]
struct PipelineArgs {
    /// Synthesize the scene from this spec instead of reading one.
    #[arg(long, conflicts_with_all = ["scene", "teacher", "dict"])]
    spec: Option<PathBuf>,
    #[arg(long, requires_all = ["teacher", "dict"])]
    scene: Option<PathBuf>,
    #[arg(long)]
    teacher: Option<PathBuf>,
    #[arg(long)]
    dict: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    afi: AfiFlags,
    /// Neighborhood size for AFI and for k-NN superpoints.
    #[arg(long)]
    knn: Option<usize>,
    /// Use the pseudo-labels as the prediction.
    #[arg(long)]
    no_tmp: bool,
    #[arg(long)]
    no_afi: bool,
    #[arg(long)]
    out: PathBuf,
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("must be positive, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn unit_interval(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if (0.0..=1.0).contains(&v) => Ok(v),
        Ok(v) => Err(format!("must be in [0,1], got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn open_unit_interval_gamma(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v < 1.0 => Ok(v),
        Ok(v) => Err(format!("gamma must be in (0,1), got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Project(a) => {
            let bundle = io::read_bundle(&a.scene)?;
            let mut csv = String::from("point,camera,u,v,depth\n");
            for h in project_all(&bundle) {
                let _ = writeln!(csv, "{},{},{},{},{}", h.point, h.camera, h.u, h.v, h.depth);
            }
            io::write_bytes(&a.out.join("hits.csv"), csv.as_bytes())
        }
        Command::Pseudo(a) => {
            let bundle = io::read_bundle(&a.scene)?;
            let teacher = io::read_teacher(&a.teacher)?;
            io::write_labels(&pseudo_labels(&bundle, &teacher)?, &a.out.join("pseudo.u16"))
        }
        Command::Corr(a) => {
            let bundle = io::read_bundle(&a.scene)?;
            let teacher = io::read_teacher(&a.teacher)?;
            let assignments = assign_masks(&bundle, &teacher)?;
            let corr = if a.no_superpoints {
                Correspondence::knn_groups(&bundle, &teacher, &assignments, a.knn)?
            } else {
                Correspondence::from_assignments(&bundle, &teacher, &assignments)?
            };
            io::write_json(&a.out.join("corr.json"), &corr)
        }
        Command::Tmp(a) => {
            let bundle = io::read_bundle(&a.scene)?;
            let teacher = io::read_teacher(&a.teacher)?;
            let dict = ClassDictionary::load(&a.dict)?;
            let mut cfg = TrainConfig::default();
            a.train.apply(&mut cfg, a.knn);
            let out = train_toy_head(&bundle, &teacher, &dict, &cfg)?;
            let predict = predict_points(&out.head, &bundle.raw_features, &teacher.text_feats, &dict)?;
            io::write_json(&a.out.join("head.json"), &out.head)?;
            write_trace(&a.out, &out.trace)?;
            io::write_labels(&LabelField::new(predict), &a.out.join("predict.u16"))
        }
        Command::Afi(a) => {
            let cfg = a.afi.resolve(a.seed, a.knn)?;
            let bundle = io::read_bundle(&a.scene)?;
            let dict = ClassDictionary::load(&a.dict)?;
            let predict = read_field(&a.labels, &bundle, &dict)?;
            let pseudo = match &a.pseudo {
                Some(p) => Some(read_field(p, &bundle, &dict)?),
                None if cfg.coverage_enabled => {
                    return Err(Error::Invalid {
                        what: "arguments",
                        reason: "coverage needs --pseudo (or pass --no-coverage)".into(),
                    })
                }
                None => None,
            };
            let fov = fov_mask(&bundle);
            let labels = afi(
                AfiInput {
                    points: &bundle.points,
                    predict: &predict,
                    fov: Some(&fov),
                    pseudo: pseudo.as_ref(),
                    num_classes: dict.num_classes(),
                },
                &cfg,
            )?;
            io::write_labels(&labels, &a.out.join("afi.u16"))
        }
        Command::Eval(a) => {
            let dict = ClassDictionary::load(&a.dict)?;
            let gt = io::read_labels(&a.gt)?;
            let pred = io::read_labels(&a.pred)?;
            let m = miou(&confusion(&gt, &pred, dict.num_classes())?);
            io::write_json(&a.out.join("metrics.json"), &metrics_json(&m, &dict))
        }
        Command::Render(a) => {
            let bundle = io::read_bundle(&a.scene)?;
            let dict = ClassDictionary::load(&a.dict)?;
            for path in &a.labels {
                let labels = read_field(path, &bundle, &dict)?;
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("labels");
                let svg = render_svg(&bundle.points, &labels, &dict, stem);
                io::write_bytes(&a.out.join(format!("{stem}.svg")), svg.as_bytes())?;
            }
            Ok(())
        }
        Command::Pipeline(a) => pipeline(a),
    }
}

fn read_spec(path: Option<&Path>, seed: Option<u64>) -> Result<SynthSpec, Error> {
    let mut spec: SynthSpec = match path {
        Some(p) => io::read_json(p)?,
        None => SynthSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    Ok(spec)
}

fn synthesize(spec: &SynthSpec) -> Result<(SceneBundle, Teacher, ClassDictionary), Error> {
    let dict = builtin_dictionary(&spec.classes)?;
    let bundle = generate_scene(spec)?;
    let teacher = generate_teacher(&bundle, &dict, spec)?.teacher;
    Ok((bundle, teacher, dict))
}

fn write_inputs(out: &Path, spec: &SynthSpec, bundle: &SceneBundle, teacher: &Teacher, dict: &ClassDictionary) -> Result<(), Error> {
    io::write_bundle(bundle, &out.join("scene"))?;
    io::write_teacher(teacher, &out.join("teacher"))?;
    dict.save(&out.join("classdict.json"))?;
    io::write_json(&out.join("synthspec.json"), spec)
}

fn synth(a: SynthArgs) -> Result<(), Error> {
    let spec = read_spec(a.spec.as_deref(), a.seed)?;
    let (bundle, teacher, dict) = synthesize(&spec)?;
    write_inputs(&a.out, &spec, &bundle, &teacher, &dict)
}

fn pipeline(a: PipelineArgs) -> Result<(), Error> {
    let afi_cfg = a.afi.resolve(a.train.seed, a.knn)?;
    let (bundle, teacher, dict) = match (&a.spec, &a.scene, &a.teacher, &a.dict) {
        (Some(spec), ..) => {
            let spec = read_spec(Some(spec), a.train.seed)?;
            let inputs = synthesize(&spec)?;
            write_inputs(&a.out, &spec, &inputs.0, &inputs.1, &inputs.2)?;
            inputs
        }
        (None, Some(scene), Some(teacher), Some(dict)) => (
            io::read_bundle(scene)?,
            io::read_teacher(teacher)?,
            ClassDictionary::load(dict)?,
        ),
        _ => {
            return Err(Error::Invalid {
                what: "arguments",
                reason: "pass --spec, or --scene with --teacher and --dict".into(),
            })
        }
    };
    let mut train = TrainConfig::default();
    a.train.apply(&mut train, a.knn);
    let cfg = PipelineConfig {
        tmp: !a.no_tmp,
        afi: !a.no_afi,
        train,
        afi_config: afi_cfg,
    };
    let result = run_pipeline(&bundle, &teacher, &dict, &cfg)?;

    let out = &a.out;
    io::write_labels(&result.pseudo, &out.join("pseudo.u16"))?;
    let mut fields = vec![("pseudo", &result.pseudo)];
    if let Some(head) = &result.head {
        io::write_json(&out.join("head.json"), head)?;
        write_trace(out, &result.trace)?;
        io::write_labels(&result.predict, &out.join("predict.u16"))?;
        fields.push(("predict", &result.predict));
    }
    if let Some(labels) = &result.afi {
        io::write_labels(labels, &out.join("afi.u16"))?;
        fields.push(("afi", labels));
    }
    if let Some(gt) = &bundle.gt_labels {
        fields.push(("gt", gt));
    }
    for (name, labels) in fields {
        let svg = render_svg(&bundle.points, labels, &dict, name);
        io::write_bytes(&out.join(format!("{name}.svg")), svg.as_bytes())?;
    }

    let stages: Vec<Value> = result
        .metrics
        .iter()
        .map(|s| {
            let mut v = metrics_json(&s.metrics, &dict);
            v["stage"] = json!(s.stage);
            v
        })
        .collect();
    let report = json!({
        "scene": bundle.name,
        "miou": result.metrics.last().map(|s| s.metrics.miou),
        "superpoint_accuracy": result.superpoint_accuracy,
        "final_loss": result.trace.last().map(|t| t.l_tmp),
        "stages": stages,
        "config": cfg,
    });
    io::write_json(&out.join("metrics.json"), &report)
}

fn metrics_json(m: &Metrics, dict: &ClassDictionary) -> Value {
    let per_class: serde_json::Map<String, Value> = dict
        .classes()
        .iter()
        .zip(&m.per_class_iou)
        .map(|(c, iou)| (c.name.clone(), json!(iou)))
        .collect();
    json!({ "miou": m.miou, "per_class_iou": per_class, "ignored": m.ignored })
}

fn write_trace(out: &Path, trace: &[ovseg3d::tmp::TraceRow]) -> Result<(), Error> {
    let mut csv = String::from("step,l_ip,l_tp,l_tmp\n");
    for t in trace {
        let _ = writeln!(csv, "{},{},{},{}", t.step, t.l_ip, t.l_tp, t.l_tmp);
    }
    io::write_bytes(&out.join("trace.csv"), csv.as_bytes())
}

fn read_field(path: &Path, bundle: &SceneBundle, dict: &ClassDictionary) -> Result<LabelField, Error> {
    let labels = io::read_labels(path)?;
    if labels.len() != bundle.len() {
        return Err(Error::LengthMismatch {
            what: path.display().to_string(),
            expected: bundle.len(),
            actual: labels.len(),
        });
    }
    labels.validate(dict.num_classes())?;
    Ok(labels)
}
