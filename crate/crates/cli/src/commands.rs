use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use thiserror::Error;

use skillsel::config::{default_config, ConfigError, KvConfig};
use skillsel::datagen::{
    build_dataset, observe, read_dataset, write_dataset, DatagenConfig, DatagenError, DatasetKind,
    DATASET_FORMAT_VERSION,
};
use skillsel::evalharness::{
    budget_ticks, obstacle_course, run_cot_curve, run_episodes, run_obstacle_course, run_transition_course,
    run_viability_calibration, sweep_family, transition_course, CourseConfig, Direction, EvalError, SweepConfig,
    LOG_EXTRA_COLUMNS,
};
use skillsel::nnet::{init_model, load_model, save_model, train as fit, HeadKind, NnetError, TrainConfig, MODEL_FORMAT_VERSION};
use skillsel::rng::{derive, derived_stream};
use skillsel::selector::{log_header, SelectorConfig, SelectorError, SkillRegistry};
use skillsel::simkernel::{load_skills, KernelError, SkillProfile};
use skillsel::terrain::{
    extract_heightfield, generate_terrain, CourseBuilder, TerrainError, TerrainField, TerrainKind, TerrainSpec,
};

use crate::manifest::Manifest;
use crate::Common;

const BASE_SKILLS: [&str; 3] = ["walk", "ascend", "descend"];
const TAG_EVAL: u64 = 0xe7a1;
const TAG_DEMO: u64 = 0xde70;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("model file not found: {}", .0.display())]
    MissingModel(PathBuf),
    #[error("{}: {source}", .path.display())]
    File { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Nnet(#[from] NnetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Selector(#[from] SelectorError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Terrain(#[from] TerrainError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Built-in defaults, then `--config`, then every `--set`.
fn load_config(common: &Common) -> Result<KvConfig> {
    let mut cfg = default_config();
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).map_err(|source| CliError::File { path: path.clone(), source })?;
        cfg.merge(&KvConfig::parse(&text)?);
    }
    for o in &common.overrides {
        cfg.apply(o).map_err(|_| CliError::Usage(format!("--set expects KEY=VALUE, got `{o}`")))?;
    }
    Ok(cfg)
}

fn out_dir(common: &Common) -> Result<&Path> {
    fs::create_dir_all(&common.out).map_err(|source| CliError::File { path: common.out.clone(), source })?;
    Ok(&common.out)
}

fn write_output(dir: &Path, name: &str, bytes: &[u8], manifest: &mut Manifest) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|source| CliError::File { path, source })?;
    manifest.output(name, bytes);
    Ok(())
}

fn master_seed(cfg: &KvConfig) -> Result<u64> {
    Ok(cfg.require("seed.master")?)
}

fn find_skill(skills: &[SkillProfile], name: &str) -> Result<SkillProfile> {
    skills
        .iter()
        .find(|s| s.name == name)
        .cloned()
        .ok_or_else(|| CliError::Usage(format!("unknown skill `{name}`")))
}

fn parse_kind(s: &str) -> Result<TerrainKind> {
    s.parse().map_err(|e: TerrainError| CliError::Usage(e.to_string()))
}

#[derive(Debug, Args)]
pub struct TerrainArgs {
    /// Terrain family: flat, rough, discrete, stairs_up, stairs_down, gap, wall.
    #[arg(long)]
    kind: String,
    /// Step height, roughness, wall height or gap width, by family.
    #[arg(long, default_value_t = 0.0)]
    difficulty: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also export the heightfield seen from `x,y,yaw`.
    #[arg(long, value_name = "X,Y,YAW")]
    pose: Option<String>,
}

pub fn terrain(common: &Common, args: &TerrainArgs) -> Result<()> {
    let cfg = load_config(common)?;
    let kind = parse_kind(&args.kind)?;
    if !(args.difficulty >= 0.0 && args.difficulty.is_finite()) {
        return Err(CliError::Usage("--difficulty must be a non-negative number".into()));
    }
    let dg = DatagenConfig::from_kv(&cfg)?;
    let spec = dg.terrain_spec(kind, args.difficulty, args.seed);
    let field = generate_terrain(&spec)?;
    let dir = out_dir(common)?;
    let mut manifest = Manifest::new("terrain", &cfg);
    manifest.set("seed", args.seed);

    let mut raster = String::new();
    for row in field.rasterize() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        raster.push_str(&line.join(","));
        raster.push('\n');
    }
    write_output(dir, &format!("terrain_{kind}.csv"), raster.as_bytes(), &mut manifest)?;

    if let Some(p) = &args.pose {
        let v: Vec<f64> = p
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| CliError::Usage(format!("--pose expects X,Y,YAW, got `{p}`")))?;
        if v.len() != 3 {
            return Err(CliError::Usage(format!("--pose expects X,Y,YAW, got `{p}`")));
        }
        let pose = field.pose_at(v[0], v[1], v[2]);
        let raw = extract_heightfield(&field, &pose)?;
        write_output(dir, &format!("heightfield_{kind}.csv"), raw.to_csv().as_bytes(), &mut manifest)?;
        let seen = observe(&field, &pose, dg.noise_amplitude, &mut derived_stream(args.seed, &[TAG_DEMO]))?;
        write_output(dir, &format!("observation_{kind}.csv"), seen.to_csv().as_bytes(), &mut manifest)?;
    }
    manifest.write(dir)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Viability,
    Cot,
}

impl From<KindArg> for DatasetKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Viability => DatasetKind::Viability,
            KindArg::Cot => DatasetKind::Cot,
        }
    }
}

#[derive(Debug, Args)]
pub struct CollectArgs {
    #[arg(long, value_enum)]
    kind: KindArg,
    #[arg(long)]
    skill: String,
    #[arg(long)]
    size: usize,
    /// Dataset seed; defaults to `seed.master`.
    #[arg(long)]
    seed: Option<u64>,
}

pub fn collect(common: &Common, args: &CollectArgs) -> Result<()> {
    if args.size == 0 {
        return Err(CliError::Usage("--size must be at least 1".into()));
    }
    let cfg = load_config(common)?;
    let skills = load_skills(&cfg)?;
    let skill = find_skill(&skills, &args.skill)?;
    let dg = DatagenConfig::from_kv(&cfg)?.for_skill(&cfg, &skill.name)?;
    let seed = match args.seed {
        Some(s) => s,
        None => master_seed(&cfg)?,
    };
    let kind = DatasetKind::from(args.kind);
    let ds = build_dataset(&dg, kind, &skill, args.size, seed)?;
    let dir = out_dir(common)?;
    let name = format!("{}_{}_s{seed}.csv", kind.name(), skill.name);
    let path = dir.join(&name);
    write_dataset(&ds, &path)?;
    let mut manifest = Manifest::new(&format!("collect_{}_{}", kind.name(), skill.name), &cfg);
    manifest.set("seed", seed);
    manifest.set("dataset_format_version", DATASET_FORMAT_VERSION);
    manifest.output(&name, &fs::read(&path)?);
    manifest.write(dir)?;
    println!("{}", path.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Head to train; must match the dataset kind. Inferred when omitted.
    #[arg(long)]
    head: Option<String>,
}

pub fn train(common: &Common, args: &TrainArgs) -> Result<()> {
    let cfg = load_config(common)?;
    let tc = TrainConfig::from_kv(&cfg)?;
    if !args.dataset.exists() {
        return Err(CliError::File {
            path: args.dataset.clone(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        });
    }
    let ds = read_dataset(&args.dataset)?;
    let head = match &args.head {
        Some(h) => h.parse::<HeadKind>().map_err(|e| CliError::Usage(e.to_string()))?,
        None => match ds.kind {
            DatasetKind::Viability => HeadKind::Sigmoid,
            DatasetKind::Cot => HeadKind::Linear,
        },
    };
    let skills = load_skills(&cfg)?;
    let skill_name = skills
        .iter()
        .find(|s| s.id == ds.skill_id)
        .map_or_else(|| format!("skill{}", ds.skill_id), |s| s.name.clone());
    let (model, history) = fit(&init_model(head, tc.seed), &ds, &tc)?;

    let dir = out_dir(common)?;
    let stem = format!("{}_{skill_name}", ds.kind.name());
    let model_path = dir.join(format!("{stem}.model"));
    save_model(&model, &model_path)?;
    let mut manifest = Manifest::new(&format!("train_{stem}"), &cfg);
    manifest.set("seed", tc.seed);
    manifest.set("dataset_master_seed", ds.master_seed);
    manifest.set("dataset_format_version", DATASET_FORMAT_VERSION);
    manifest.set("model_format_version", MODEL_FORMAT_VERSION);
    manifest.output(&format!("{stem}.model"), &fs::read(&model_path)?);
    write_output(dir, &format!("{stem}_loss.csv"), history.to_csv().as_bytes(), &mut manifest)?;
    manifest.write(dir)?;
    println!("{}", model_path.display());
    Ok(())
}

/// Register `names` with their models from `models` (named
/// `viability_<skill>.model` and `cot_<skill>.model`).
fn load_registry(cfg: &KvConfig, models: &Path, names: &[String]) -> Result<SkillRegistry> {
    let skills = load_skills(cfg)?;
    let sel = SelectorConfig::from_kv(cfg)?;
    let mut reg = SkillRegistry::new();
    for name in names {
        let profile = find_skill(&skills, name)?;
        let load = |kind: &str| {
            let path = models.join(format!("{kind}_{name}.model"));
            if !path.exists() {
                return Err(CliError::MissingModel(path));
            }
            Ok(load_model(&path)?)
        };
        reg.register(profile, load("viability")?, load("cot")?, sel.threshold(name)?)?;
    }
    Ok(reg)
}

fn skill_list(arg: &Option<String>, default: &[&str]) -> Vec<String> {
    match arg {
        Some(s) => s.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect(),
        None => default.iter().map(|s| s.to_string()).collect(),
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// viability-calibration, cot-curve, transition, or obstacle.
    #[arg(long)]
    experiment: String,
    /// Directory holding trained models; defaults to the output directory.
    #[arg(long)]
    models: Option<PathBuf>,
    /// Comma-separated skill names.
    #[arg(long)]
    skills: Option<String>,
}

fn course_config(cfg: &KvConfig, seed: u64) -> Result<CourseConfig> {
    let d = CourseConfig::default();
    let heights = match cfg.raw("eval.course.heights") {
        Some(s) => s
            .split(';')
            .map(|h| h.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| CliError::Usage(format!("eval.course.heights: cannot parse `{s}`")))?,
        None => d.heights.clone(),
    };
    Ok(CourseConfig {
        heights,
        trials: cfg.get_or("eval.trials", d.trials)?,
        seed,
        noise_amplitude: cfg.get_or("datagen.noise_amplitude", d.noise_amplitude)?,
        window_length: SelectorConfig::from_kv(cfg)?.window_length,
        ..d
    })
}

pub fn eval(common: &Common, args: &EvalArgs) -> Result<()> {
    let cfg = load_config(common)?;
    let seed = derive(master_seed(&cfg)?, &[TAG_EVAL]);
    let dg = DatagenConfig::from_kv(&cfg)?;
    let models = args.models.clone().unwrap_or_else(|| common.out.clone());
    let mut manifest = Manifest::new(&format!("eval_{}", args.experiment), &cfg);
    manifest.set("seed", seed);
    manifest.set("model_format_version", MODEL_FORMAT_VERSION);
    let samples: usize = cfg.get_or("eval.samples_per_height", 500)?;
    match args.experiment.as_str() {
        "viability-calibration" | "cot-curve" => {
            let reg = load_registry(&cfg, &models, &skill_list(&args.skills, &BASE_SKILLS))?;
            let dir = out_dir(common)?;
            for s in reg.skills() {
                let sweep = SweepConfig::new(sweep_family(&s.profile), samples, seed);
                let (curve, tag) = if args.experiment == "cot-curve" {
                    let cutoff = cfg.get_or("eval.viability_cutoff", 0.9)?;
                    (run_cot_curve(&sweep, &dg, &s.profile, &s.cot, cutoff)?, "cot_curve")
                } else {
                    (run_viability_calibration(&sweep, &dg, &s.profile, &s.viability)?, "viability_calibration")
                };
                let name = format!("{tag}_{}_s{seed}.csv", s.profile.name);
                write_output(dir, &name, curve.to_csv().as_bytes(), &mut manifest)?;
            }
        }
        "transition" => {
            let reg = load_registry(&cfg, &models, &skill_list(&args.skills, &BASE_SKILLS))?;
            let skills = load_skills(&cfg)?;
            let baseline_name: String = cfg.get_or("eval.baseline", "walk".to_string())?;
            let baseline = find_skill(&skills, &baseline_name)?;
            let course = course_config(&cfg, seed)?;
            manifest.set("baseline", &baseline.name);
            let dir = out_dir(common)?;
            for direction in [Direction::Up, Direction::Down] {
                let r = run_transition_course(direction, &course, &reg, &baseline, &dg.robot)?;
                let name = format!("transition_{}_s{seed}.csv", direction.name());
                write_output(dir, &name, r.to_csv().as_bytes(), &mut manifest)?;
            }
        }
        "obstacle" => {
            let all: Vec<&str> = BASE_SKILLS.iter().copied().chain(["climb", "gap"]).collect();
            let reg = load_registry(&cfg, &models, &skill_list(&args.skills, &all))?;
            let window = SelectorConfig::from_kv(&cfg)?.window_length;
            let run = run_obstacle_course(&reg, window, &dg.robot, dg.noise_amplitude, seed)?;
            let dir = out_dir(common)?;
            let mut log = log_header(&reg, &LOG_EXTRA_COLUMNS);
            log.push('\n');
            for row in &run.episode.log {
                log.push_str(row);
                log.push('\n');
            }
            write_output(dir, &format!("obstacle_log_s{seed}.csv"), log.as_bytes(), &mut manifest)?;
            let summary = format!(
                "outcome,ticks,traveled,skills_used\n{},{},{:.4},{}\n",
                run.episode.outcome.name(),
                run.episode.ticks,
                run.episode.traveled,
                run.skills_used.join(";")
            );
            write_output(dir, &format!("obstacle_summary_s{seed}.csv"), summary.as_bytes(), &mut manifest)?;
        }
        other => return Err(CliError::Usage(format!("unknown experiment `{other}`"))),
    }
    manifest.write(&common.out)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CourseArg {
    Flat,
    StairsUp,
    StairsDown,
    Obstacle,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long, value_enum)]
    course: CourseArg,
    /// Step height of the stair courses.
    #[arg(long, default_value_t = 0.15)]
    height: f64,
    #[arg(long)]
    models: Option<PathBuf>,
    /// Comma-separated skill names; an empty list gives a selector that
    /// always stops.
    #[arg(long)]
    skills: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

pub fn demo(common: &Common, args: &DemoArgs) -> Result<()> {
    let cfg = load_config(common)?;
    let seed = match args.seed {
        Some(s) => s,
        None => derive(master_seed(&cfg)?, &[TAG_DEMO]),
    };
    let dg = DatagenConfig::from_kv(&cfg)?;
    let models = args.models.clone().unwrap_or_else(|| common.out.clone());
    let default: Vec<&str> = match args.course {
        CourseArg::Obstacle => BASE_SKILLS.iter().copied().chain(["climb", "gap"]).collect(),
        _ => BASE_SKILLS.to_vec(),
    };
    let reg = load_registry(&cfg, &models, &skill_list(&args.skills, &default))?;
    let course = CourseConfig::default();
    let (field, target, name): (TerrainField, f64, &str) = match args.course {
        CourseArg::Flat => (CourseBuilder::new(course.width).flat(8.0).build(TerrainSpec::flat()), 4.5, "flat"),
        CourseArg::StairsUp => (transition_course(Direction::Up, args.height, &course), 4.5, "stairs_up"),
        CourseArg::StairsDown => (transition_course(Direction::Down, args.height, &course), 4.5, "stairs_down"),
        CourseArg::Obstacle => (obstacle_course(course.width), 5.5, "obstacle"),
    };
    let start = field.pose_at(course.spawn_x, course.width / 2.0, 0.0);
    let window = SelectorConfig::from_kv(&cfg)?.window_length;
    let budget = budget_ticks(field.extent().0, &dg.robot);
    let eps = run_episodes(&field, start, target, budget, &reg, window, &dg.robot, dg.noise_amplitude, &[seed], true)?;
    let ep = &eps[0];
    let mut log = log_header(&reg, &LOG_EXTRA_COLUMNS);
    log.push('\n');
    for row in &ep.log {
        log.push_str(row);
        log.push('\n');
    }
    let dir = out_dir(common)?;
    let mut manifest = Manifest::new(&format!("demo_{name}"), &cfg);
    manifest.set("seed", seed);
    write_output(dir, &format!("demo_{name}_s{seed}.csv"), log.as_bytes(), &mut manifest)?;
    manifest.write(dir)?;
    println!("{} after {} ticks, {:.2} m", ep.outcome.name(), ep.ticks, ep.traveled);
    Ok(())
}
