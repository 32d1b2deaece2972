//! The `yumi` command-line front end. Angles cross the boundary in degrees
//! (radians with `--radians`) and joints in PoE order (RobotStudio order with
//! `--order rs`). Results go to `out`; failures go to `err` as one JSON
//! object, with exit code 1 for singular or empty results and 2 for
//! malformed input.

use std::ffi::OsString;
use std::io::{Read, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Rotation3;
use serde::Deserialize;
use serde_json::{json, Map, Value};

use crate::error::{KinematicsError, Result};
use crate::fixtures::{arm_angle_table, solution_table, solution_table_request};
use crate::ik::{
    error_landscape, ik_2d_search, ik_nested_1d, IkRequest, IkSolution, IkSolutionSet, SearchSettings,
};
use crate::jacobian::{augmented_jacobian, kinematic_jacobian};
use crate::model::{
    forward_kinematics, from_robotstudio_order, load_params, parse_params, to_robotstudio_order,
    JointLimits, JointVector, KinematicParams, Pose, DEFAULT_PARAMS_JSON,
};
use crate::sew::{sew_angles, sew_jacobian, Convention, Reference, SewConfig};
use crate::singularity::{classify, self_motion_sweep, SweepSettings, Tolerances};
use crate::spatial::{angle_distance, is_rotation, wrap_to_pi, Rot3, Vec3};

/// Largest Table I deviation accepted, degrees (values are printed to 2 decimals).
const TABLE1_TOL_DEG: f64 = 0.01;
/// Smallest arm-angle gap that counts as a discrepancy, degrees.
const TABLE1_DISCREPANCY_DEG: f64 = 0.1;
/// Largest per-joint deviation from a Table II row, degrees.
const TABLE2_TOL_DEG: f64 = 0.05;
/// Input rotation matrices must be orthonormal to this tolerance.
const ROTATION_INPUT_TOL: f64 = 1e-6;

#[derive(Parser, Debug)]
#[command(name = "yumi", version, about = "ABB YuMi arm kinematics: FK, SEW angle, Jacobians, singularities, IK")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Kinematic parameters and joint limits (JSON); defaults to the YuMi.
    #[arg(long, global = true)]
    params: Option<PathBuf>,
    /// Output format; sweeps, landscapes and tables default to CSV, the rest to JSON.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Read and write angles in radians instead of degrees.
    #[arg(long, global = true)]
    radians: bool,
    /// Joint order of joint vectors on the command line and in output.
    #[arg(long, global = true, value_enum, default_value_t = Order::Poe)]
    order: Order,
    /// Arm angle reference direction: z, y, h1 (joint 1 axis) or x,y,z.
    #[arg(long = "ref", global = true, default_value = "z", value_parser = parse_reference)]
    reference: Reference,
    /// Arm angle convention.
    #[arg(long, global = true, value_enum, default_value_t = ConventionArg::Abb)]
    convention: ConventionArg,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tool and wrist poses with the arm angle in every convention.
    Fk(JointsArg),
    /// Arm angles of a configuration.
    Sew(JointsArg),
    /// Kinematic, SEW and augmented Jacobians of a configuration.
    Jacobian(JointsArg),
    /// Singularity indicators of a configuration.
    Singularity {
        #[command(flatten)]
        joints: JointsArg,
        /// Thresholds sized for values rounded to two decimals of a degree.
        #[arg(long)]
        rounded: bool,
    },
    /// All joint configurations reaching a pose with a given arm angle.
    Ik {
        #[command(flatten)]
        request: RequestArgs,
        #[arg(long, value_enum, default_value_t = Method::TwoD)]
        method: Method,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Arm angle along the self-motion of a pose, sampled over q1.
    Sweep {
        #[command(flatten)]
        request: RequestArgs,
        /// q1 sample spacing.
        #[arg(long, default_value_t = 0.25, allow_negative_numbers = true)]
        q1_step: f64,
        /// q1 range as lo,hi; defaults to the full turn.
        #[arg(long, value_parser = parse_pair, allow_negative_numbers = true)]
        q1_range: Option<(f64, f64)>,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Minimum branch error over the (q1, q2) search grid.
    Landscape {
        #[command(flatten)]
        request: RequestArgs,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Arm angles of the ten reference configurations against the shipped table.
    Table1,
    /// The reference inverse kinematics request against its shipped solution table.
    Table2 {
        #[arg(long, value_enum, default_value_t = Method::TwoD)]
        method: Method,
    },
}

#[derive(Args, Debug)]
struct JointsArg {
    /// Seven comma-separated joint angles.
    #[arg(long, value_parser = parse_joints, allow_negative_numbers = true)]
    joints: [f64; 7],
}

#[derive(Args, Debug)]
struct RequestArgs {
    /// Request JSON `{"R", "p", "psi_deg", "psi_convention", "ref"}`; `-` reads stdin.
    #[arg(long, conflicts_with = "joints")]
    input: Option<PathBuf>,
    /// Build the request from this configuration instead.
    #[arg(long, value_parser = parse_joints, allow_negative_numbers = true)]
    joints: Option<[f64; 7]>,
}

#[derive(Args, Debug)]
struct SearchArgs {
    /// Search grid spacing.
    #[arg(long)]
    grid_step: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum Order {
    Poe,
    Rs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ConventionArg {
    Abb,
    Conventional,
    Sign,
}

impl From<ConventionArg> for Convention {
    fn from(c: ConventionArg) -> Self {
        match c {
            ConventionArg::Abb => Convention::Abb,
            ConventionArg::Conventional => Convention::Conventional,
            ConventionArg::Sign => Convention::SignVariant,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Method {
    #[value(name = "2d")]
    TwoD,
    #[value(name = "nested1d")]
    Nested1d,
}

fn parse_numbers(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()
        .and_then(|v| {
            if v.iter().all(|x| x.is_finite()) {
                Ok(v)
            } else {
                Err("values must be finite".into())
            }
        })
}

fn parse_joints(s: &str) -> std::result::Result<[f64; 7], String> {
    let v = parse_numbers(s)?;
    v.try_into().map_err(|v: Vec<f64>| format!("expected 7 joint values, got {}", v.len()))
}

fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    match parse_numbers(s)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        v => Err(format!("expected 2 values, got {}", v.len())),
    }
}

fn parse_reference(s: &str) -> std::result::Result<Reference, String> {
    let s = s.trim();
    match s.to_ascii_lowercase().as_str() {
        "z" => return Ok(Reference::WorldZ),
        "y" => return Ok(Reference::WorldY),
        "h1" => return Ok(Reference::Joint1Axis),
        _ => {}
    }
    let body = s.strip_prefix("custom").map(|b| b.trim_start_matches([':', ' ', '='])).unwrap_or(s);
    let v = parse_numbers(body)?;
    let [x, y, z] = v.as_slice() else {
        return Err(format!("expected z, y, h1 or three components, got {s:?}"));
    };
    let v = Vec3::new(*x, *y, *z);
    if v.norm() < 1e-12 {
        return Err("reference direction must be nonzero".into());
    }
    Ok(Reference::Custom(v))
}

/// A failure on its way to `err`.
struct CliError {
    code: i32,
    kind: &'static str,
    message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        CliError { code: 2, kind: "invalid_input", message: message.into() }
    }
}

impl From<KinematicsError> for CliError {
    fn from(e: KinematicsError) -> Self {
        use KinematicsError::*;
        let (code, kind) = match &e {
            CoordinateSingularity { .. } => (1, "coordinate_singularity"),
            ZeroShoulderWrist => (1, "zero_shoulder_wrist"),
            SewJacobianUndefined(_) => (1, "sew_jacobian_undefined"),
            AmbiguousNullSpace { .. } => (1, "ambiguous_null_space"),
            NonIntersectingWristAxes => (1, "non_intersecting_wrist_axes"),
            EmptySweep => (1, "empty_sweep"),
            EmptySolutionSet => (1, "empty_solution_set"),
            InvalidParams(_) => (2, "invalid_params"),
            InvalidInput(_) => (2, "invalid_input"),
            Io(_) => (2, "io"),
            Json(_) => (2, "json"),
            Csv(_) => (2, "csv"),
        };
        CliError { code, kind, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError { code: 2, kind: "io", message: e.to_string() }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError { code: 2, kind: "json", message: e.to_string() }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError { code: 2, kind: "csv", message: e.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Runs the command line `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let sink: &mut dyn Write = if code == 0 { out } else { err };
            let _ = write!(sink, "{e}");
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let body = json!({ "error": e.kind, "message": e.message });
            let _ = writeln!(err, "{body}");
            e.code
        }
    }
}

/// Shared state of one invocation.
struct Context {
    params: KinematicParams,
    limits: JointLimits,
    radians: bool,
    order: Order,
    reference: Reference,
    convention: Convention,
}

impl Context {
    fn angle_in(&self, v: f64) -> f64 {
        if self.radians {
            v
        } else {
            v.to_radians()
        }
    }

    fn angle_out(&self, v: f64) -> f64 {
        if self.radians {
            v
        } else {
            v.to_degrees()
        }
    }

    fn unit(&self) -> &'static str {
        if self.radians {
            "rad"
        } else {
            "deg"
        }
    }

    fn joints_in(&self, raw: &[f64; 7]) -> JointVector {
        let q = raw.map(|v| self.angle_in(v));
        match self.order {
            Order::Poe => JointVector(q),
            Order::Rs => from_robotstudio_order(&q),
        }
    }

    fn joints_out(&self, q: &JointVector) -> [f64; 7] {
        let ordered = match self.order {
            Order::Poe => q.0,
            Order::Rs => to_robotstudio_order(q),
        };
        ordered.map(|v| self.angle_out(v))
    }

    fn e_r(&self) -> Vec3 {
        self.reference.direction(&self.params)
    }

    fn key(&self, name: &str) -> String {
        format!("{name}_{}", self.unit())
    }
}

fn execute(cli: &Cli, out: &mut dyn Write) -> CliResult<i32> {
    let g = &cli.global;
    let (params, limits) = match &g.params {
        Some(path) => load_params(path)?,
        None => parse_params(DEFAULT_PARAMS_JSON)?,
    };
    let ctx = Context {
        params,
        limits,
        radians: g.radians,
        order: g.order,
        reference: g.reference,
        convention: g.convention.into(),
    };
    match &cli.command {
        Command::Fk(j) => emit_json(out, &fk_report(&ctx, &ctx.joints_in(&j.joints)), g.format),
        Command::Sew(j) => emit_json(out, &sew_report(&ctx, &ctx.joints_in(&j.joints))?, g.format),
        Command::Jacobian(j) => emit_json(out, &jacobian_report(&ctx, &ctx.joints_in(&j.joints))?, g.format),
        Command::Singularity { joints, rounded } => {
            let tol = if *rounded { Tolerances::paper_rounded() } else { Tolerances::exact() };
            let report = classify(&ctx.params, &ctx.joints_in(&joints.joints), &ctx.e_r(), &tol);
            emit_json(out, &serde_json::to_value(report)?, g.format)
        }
        Command::Ik { request, method, search } => {
            let req = build_request(&ctx, request)?;
            let set = solve(&ctx, &req, *method, &search_settings(&ctx, search)?)?;
            write_solutions(&ctx, out, &set, g.format.unwrap_or(Format::Json))?;
            Ok(0)
        }
        Command::Sweep { request, q1_step, q1_range, search } => {
            let req = build_request(&ctx, request)?;
            let settings = SweepSettings {
                q1_range: q1_range
                    .map(|(a, b)| (ctx.angle_in(a), ctx.angle_in(b)))
                    .unwrap_or(SweepSettings::default().q1_range),
                q1_step: ctx.angle_in(*q1_step),
                search: search_settings(&ctx, search)?,
            };
            write_sweep(&ctx, out, &req, &settings, g.format.unwrap_or(Format::Csv))?;
            Ok(0)
        }
        Command::Landscape { request, search } => {
            let req = build_request(&ctx, request)?;
            write_landscape(&ctx, out, &req, &search_settings(&ctx, search)?, g.format.unwrap_or(Format::Csv))?;
            Ok(0)
        }
        Command::Table1 => table1(&ctx, out, g.format.unwrap_or(Format::Csv)),
        Command::Table2 { method } => table2(&ctx, out, *method, g.format.unwrap_or(Format::Csv)),
    }
}

fn emit_json(out: &mut dyn Write, value: &Value, format: Option<Format>) -> CliResult<i32> {
    if let Some(Format::Csv) = format {
        return Err(CliError::input("this command only writes JSON"));
    }
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(0)
}

fn matrix_rows<const R: usize, const C: usize>(m: &nalgebra::SMatrix<f64, R, C>) -> Vec<Vec<f64>> {
    (0..R).map(|i| (0..C).map(|j| m[(i, j)]).collect()).collect()
}

fn pose_json(p: &Pose) -> Value {
    json!({ "R": matrix_rows(&p.r), "p": [p.p.x, p.p.y, p.p.z] })
}

fn fk_report(ctx: &Context, q: &JointVector) -> Value {
    let chain = forward_kinematics(&ctx.params, q);
    let mut report = Map::new();
    report.insert(ctx.key("q"), json!(ctx.joints_out(q)));
    report.insert("tool".into(), pose_json(&chain.tool));
    report.insert("wrist".into(), pose_json(&chain.wrist()));
    let e_r = ctx.e_r();
    report.insert("ref".into(), json!([e_r.x, e_r.y, e_r.z]));
    match sew_angles(&ctx.params, &chain, &e_r) {
        Ok(a) => {
            report.insert(ctx.key("psi"), sew_angles_json(ctx, &a));
        }
        Err(e) => {
            report.insert(ctx.key("psi"), Value::Null);
            report.insert("psi_error".into(), json!(e.to_string()));
        }
    }
    Value::Object(report)
}

fn sew_angles_json(ctx: &Context, a: &crate::sew::SewAngles) -> Value {
    json!({
        "conventional": ctx.angle_out(a.psi_conv),
        "abb": ctx.angle_out(a.psi_abb),
        "sign": ctx.angle_out(a.psi_sign),
        "sigma": a.sigma,
        "near_coordinate_singularity": a.near_coordinate_singularity,
    })
}

fn sew_report(ctx: &Context, q: &JointVector) -> Result<Value> {
    let chain = forward_kinematics(&ctx.params, q);
    let e_r = ctx.e_r();
    let a = sew_angles(&ctx.params, &chain, &e_r)?;
    let mut report = Map::new();
    report.insert(ctx.key("q"), json!(ctx.joints_out(q)));
    report.insert("ref".into(), json!([e_r.x, e_r.y, e_r.z]));
    report.insert(ctx.key("psi"), sew_angles_json(ctx, &a));
    Ok(Value::Object(report))
}

/// Columns follow PoE joint order whatever `--order` says; values are per radian.
fn jacobian_report(ctx: &Context, q: &JointVector) -> Result<Value> {
    let e_r = ctx.e_r();
    let jk = kinematic_jacobian(&ctx.params, q);
    let j_psi = sew_jacobian(&ctx.params, q, &e_r)?;
    let ja = augmented_jacobian(&ctx.params, q, &e_r)?;
    Ok(json!({
        "q_rad": q.0,
        "kinematic": matrix_rows(&jk.0),
        "kinematic_singular_values_normalized": jk.singular_values(),
        "sew": j_psi,
        "augmented": matrix_rows(&ja.0),
        "augmented_singular_values_normalized": ja.singular_values(),
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RequestFile {
    #[serde(rename = "R")]
    r: [[f64; 3]; 3],
    p: [f64; 3],
    psi_deg: Option<f64>,
    psi_rad: Option<f64>,
    psi_convention: Option<String>,
    #[serde(rename = "ref")]
    reference: Option<Value>,
}

fn read_input(path: &PathBuf) -> CliResult<String> {
    let mut text = String::new();
    if path.as_os_str() == "-" {
        std::io::stdin().read_to_string(&mut text)?;
    } else {
        text = std::fs::read_to_string(path)?;
    }
    Ok(text)
}

fn convention_named(name: &str) -> CliResult<Convention> {
    match name.to_ascii_lowercase().as_str() {
        "abb" => Ok(Convention::Abb),
        "conventional" => Ok(Convention::Conventional),
        "sign" | "sign_variant" => Ok(Convention::SignVariant),
        other => Err(CliError::input(format!("unknown psi_convention {other:?}"))),
    }
}

fn reference_value(v: &Value) -> CliResult<Reference> {
    let text = match v {
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
        _ => return Err(CliError::input("ref must be a string or a 3-vector")),
    };
    parse_reference(&text).map_err(CliError::input)
}

fn build_request(ctx: &Context, args: &RequestArgs) -> CliResult<IkRequest> {
    if let Some(raw) = &args.joints {
        let q = ctx.joints_in(raw);
        return Ok(IkRequest::from_configuration(&ctx.params, &q, ctx.convention, ctx.e_r())?);
    }
    let path = args.input.as_ref().ok_or_else(|| CliError::input("either --input or --joints is required"))?;
    let file: RequestFile = serde_json::from_str(&read_input(path)?)?;
    let m = Rot3::from_fn(|i, j| file.r[i][j]);
    if !m.iter().all(|v| v.is_finite()) || !is_rotation(&m, ROTATION_INPUT_TOL) {
        return Err(CliError::input("R is not a rotation matrix"));
    }
    // Remove the rounding left in printed matrices.
    let r = Rotation3::from_matrix_eps(&m, 1e-15, 100, Rotation3::identity()).into_inner();
    let p = Vec3::from(file.p);
    if !p.iter().all(|v| v.is_finite()) {
        return Err(CliError::input("p must be finite"));
    }
    let psi = match (file.psi_deg, file.psi_rad) {
        (Some(d), None) => d.to_radians(),
        (None, Some(r)) => r,
        _ => return Err(CliError::input("give exactly one of psi_deg and psi_rad")),
    };
    if !psi.is_finite() {
        return Err(CliError::input("psi must be finite"));
    }
    let convention = match &file.psi_convention {
        Some(name) => convention_named(name)?,
        None => ctx.convention,
    };
    let reference = match &file.reference {
        Some(v) => reference_value(v)?,
        None => ctx.reference,
    };
    Ok(IkRequest::new(Pose::new(r, p), psi, convention, reference.direction(&ctx.params)))
}

fn search_settings(ctx: &Context, args: &SearchArgs) -> CliResult<SearchSettings> {
    let mut s = SearchSettings::default();
    if let Some(step) = args.grid_step {
        s.grid_step = ctx.angle_in(step);
    }
    s.validate()?;
    Ok(s)
}

fn solve(ctx: &Context, req: &IkRequest, method: Method, settings: &SearchSettings) -> Result<IkSolutionSet> {
    match method {
        Method::TwoD => ik_2d_search(req, &ctx.params, &ctx.limits, settings),
        Method::Nested1d => ik_nested_1d(req, &ctx.params, &ctx.limits, settings),
    }
}

fn solution_json(ctx: &Context, s: &IkSolution) -> Value {
    let mut m = Map::new();
    m.insert(ctx.key("q"), json!(ctx.joints_out(&s.q)));
    m.insert(ctx.key("q_robotstudio"), json!(to_robotstudio_order(&s.q).map(|v| ctx.angle_out(v))));
    m.insert("within_limits".into(), json!(s.within_limits));
    m.insert("pose_residual".into(), json!({ "rot_rad": s.pose_residual.rot_rad, "pos_mm": s.pose_residual.pos_mm }));
    m.insert(ctx.key("psi_residual"), json!(ctx.angle_out(s.psi_residual)));
    m.insert("branch_id".into(), json!(s.branch_id));
    m.insert(ctx.key("windings"), json!(s.windings.iter().map(|w| ctx.joints_out(w)).collect::<Vec<_>>()));
    Value::Object(m)
}

fn write_solutions(ctx: &Context, out: &mut dyn Write, set: &IkSolutionSet, format: Format) -> CliResult<()> {
    match format {
        Format::Json => {
            let items: Vec<Value> = set.solutions.iter().map(|s| solution_json(ctx, s)).collect();
            serde_json::to_writer_pretty(&mut *out, &items)?;
            writeln!(out)?;
        }
        Format::Csv => {
            let u = ctx.unit();
            let mut w = csv::Writer::from_writer(out);
            let mut header: Vec<String> = (1..=7).map(|i| format!("q{i}_{u}")).collect();
            header.extend(["within_limits", "rot_residual_rad", "pos_residual_mm"].map(String::from));
            header.extend([format!("psi_residual_{u}"), "branch_id".into()]);
            w.write_record(&header)?;
            for s in &set.solutions {
                let mut rec: Vec<String> = ctx.joints_out(&s.q).iter().map(|v| v.to_string()).collect();
                rec.push(s.within_limits.to_string());
                rec.push(s.pose_residual.rot_rad.to_string());
                rec.push(s.pose_residual.pos_mm.to_string());
                rec.push(ctx.angle_out(s.psi_residual).to_string());
                rec.push(s.branch_id.to_string());
                w.write_record(&rec)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn write_sweep(
    ctx: &Context,
    out: &mut dyn Write,
    req: &IkRequest,
    settings: &SweepSettings,
    format: Format,
) -> CliResult<()> {
    let sweep = self_motion_sweep(&ctx.params, &req.tool_pose, &req.e_r, settings)?;
    let cfg = SewConfig { e_r: req.e_r, convention: ctx.convention };
    let psi = |q: &JointVector| cfg.angle(&ctx.params, &forward_kinematics(&ctx.params, q)).ok();
    let u = ctx.unit();
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            let mut header = vec![format!("q1_{u}"), format!("psi_{u}")];
            header.extend((1..=7).map(|i| format!("j{i}_{u}")));
            header.push("branch_id".into());
            w.write_record(&header)?;
            for s in &sweep.samples {
                let Some(p) = psi(&s.q) else { continue };
                let mut rec = vec![ctx.angle_out(s.q1).to_string(), ctx.angle_out(p).to_string()];
                rec.extend(ctx.joints_out(&s.q).iter().map(|v| v.to_string()));
                rec.push(s.branch.to_string());
                w.write_record(&rec)?;
            }
            w.flush()?;
        }
        Format::Json => {
            let samples: Vec<Value> = sweep
                .samples
                .iter()
                .filter_map(|s| {
                    let p = psi(&s.q)?;
                    let mut m = Map::new();
                    m.insert(ctx.key("q1"), json!(ctx.angle_out(s.q1)));
                    m.insert(ctx.key("psi"), json!(ctx.angle_out(p)));
                    m.insert(ctx.key("q"), json!(ctx.joints_out(&s.q)));
                    m.insert("branch_id".into(), json!(s.branch));
                    Some(Value::Object(m))
                })
                .collect();
            let extrema: Vec<Value> = sweep
                .extrema
                .iter()
                .map(|e| {
                    let mut m = Map::new();
                    m.insert("branch_id".into(), json!(e.branch));
                    m.insert("kind".into(), serde_json::to_value(e.kind).unwrap_or(Value::Null));
                    m.insert(ctx.key("q1"), json!(ctx.angle_out(e.q1)));
                    m.insert(ctx.key("psi"), json!(psi(&e.q).map(|p| ctx.angle_out(p))));
                    m.insert(ctx.key("q"), json!(ctx.joints_out(&e.q)));
                    Value::Object(m)
                })
                .collect();
            serde_json::to_writer_pretty(&mut *out, &json!({ "samples": samples, "extrema": extrema }))?;
            writeln!(out)?;
        }
    }
    Ok(())
}

fn write_landscape(
    ctx: &Context,
    out: &mut dyn Write,
    req: &IkRequest,
    settings: &SearchSettings,
    format: Format,
) -> CliResult<()> {
    let land = error_landscape(req, &ctx.params, settings)?;
    let n2 = land.q2.len();
    let u = ctx.unit();
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record([
                format!("q1_{u}"),
                format!("q2_{u}"),
                "min_error".into(),
                "exact_branches".into(),
                "min_is_exact".into(),
            ])?;
            for (i, &a) in land.q1.iter().enumerate() {
                for (j, &b) in land.q2.iter().enumerate() {
                    let k = i * n2 + j;
                    w.write_record([
                        ctx.angle_out(a).to_string(),
                        ctx.angle_out(b).to_string(),
                        land.min_error[k].to_string(),
                        land.branch_count[k].to_string(),
                        land.exact_minimum[k].to_string(),
                    ])?;
                }
            }
            w.flush()?;
        }
        Format::Json => {
            // JSON has no infinity; cells without any branch are null.
            let finite = |v: f64| if v.is_finite() { json!(v) } else { Value::Null };
            let mut m = Map::new();
            m.insert(ctx.key("q1"), json!(land.q1.iter().map(|&v| ctx.angle_out(v)).collect::<Vec<_>>()));
            m.insert(ctx.key("q2"), json!(land.q2.iter().map(|&v| ctx.angle_out(v)).collect::<Vec<_>>()));
            m.insert("min_error".into(), json!(land.min_error.iter().map(|&v| finite(v)).collect::<Vec<_>>()));
            m.insert("exact_branches".into(), json!(land.branch_count));
            m.insert("min_is_exact".into(), json!(land.exact_minimum));
            serde_json::to_writer_pretty(&mut *out, &Value::Object(m))?;
            writeln!(out)?;
        }
    }
    Ok(())
}

/// Signed angle difference in degrees, wrapped to (-180, 180].
fn diff_deg(a_deg: f64, b_deg: f64) -> f64 {
    wrap_to_pi((a_deg - b_deg).to_radians()).to_degrees()
}

fn write_table(out: &mut dyn Write, header: &[&str], rows: &[Vec<String>], format: Format) -> CliResult<()> {
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(header)?;
            for r in rows {
                w.write_record(r)?;
            }
            w.flush()?;
        }
        Format::Json => {
            let items: Vec<Value> = rows
                .iter()
                .map(|r| {
                    Value::Object(header.iter().zip(r).map(|(h, v)| (h.to_string(), json!(v))).collect())
                })
                .collect();
            serde_json::to_writer_pretty(&mut *out, &items)?;
            writeln!(out)?;
        }
    }
    Ok(())
}

/// Arm angles are always printed in degrees here, like the table.
fn table1(ctx: &Context, out: &mut dyn Write, format: Format) -> CliResult<i32> {
    let header = [
        "row", "ref", "psi_rs_deg", "psi_abb_deg", "abb_diff_deg", "psi_sign_table_deg", "psi_sign_deg",
        "sign_diff_deg", "discrepant", "abb_sign_gap_deg", "pass",
    ];
    let mut rows = Vec::new();
    let mut all = true;
    for r in arm_angle_table()? {
        let chain = forward_kinematics(&ctx.params, &r.q());
        let refs = [("z", Reference::WorldZ, r.psi_rs_z, r.psi_sign_z), ("y", Reference::WorldY, r.psi_rs_y, r.psi_sign_y)];
        let mut cells = Vec::with_capacity(2);
        for (name, reference, psi_rs, psi_sign_table) in refs {
            let a = sew_angles(&ctx.params, &chain, &reference.direction(&ctx.params))?;
            let (abb, sign) = (a.psi_abb.to_degrees(), a.psi_sign.to_degrees());
            cells.push((name, psi_rs, abb, psi_sign_table, sign, diff_deg(abb, sign).abs()));
        }
        // A flagged row must show the discrepancy for at least one reference:
        // the table marks cells whose own printed values differ by less.
        let row_gap = cells.iter().map(|c| c.5).fold(0.0, f64::max);
        for (name, psi_rs, abb, psi_sign_table, sign, gap) in cells {
            let d_abb = diff_deg(abb, psi_rs);
            let d_sign = diff_deg(sign, psi_sign_table);
            let pass = d_abb.abs() <= TABLE1_TOL_DEG
                && d_sign.abs() <= TABLE1_TOL_DEG
                && (!r.discrepant || row_gap >= TABLE1_DISCREPANCY_DEG);
            all &= pass;
            rows.push(vec![
                r.row.to_string(),
                name.to_string(),
                format!("{psi_rs:.2}"),
                format!("{abb:.6}"),
                format!("{d_abb:.6}"),
                format!("{psi_sign_table:.2}"),
                format!("{sign:.6}"),
                format!("{d_sign:.6}"),
                r.discrepant.to_string(),
                format!("{gap:.6}"),
                pass.to_string(),
            ]);
        }
    }
    write_table(out, &header, &rows, format)?;
    Ok(if all { 0 } else { 1 })
}

/// Matches every solution to the closest table row. Passes when there are as
/// many solutions as rows, each row is matched once within tolerance and the
/// joint-limit flags agree.
fn table2(ctx: &Context, out: &mut dyn Write, method: Method, format: Format) -> CliResult<i32> {
    let table = solution_table()?;
    let req = solution_table_request(&ctx.params)?;
    let set = solve(ctx, &req, method, &SearchSettings::default())?;
    let header = [
        "row", "table_q_deg", "solution_q_deg", "max_joint_diff_deg", "table_in_limits", "solution_in_limits",
        "pass",
    ];
    let mut used = vec![false; set.solutions.len()];
    let mut rows = Vec::new();
    let mut all = set.solutions.len() == table.len();
    for r in &table {
        let target = r.q();
        let best = set
            .solutions
            .iter()
            .enumerate()
            .filter(|(k, _)| !used[*k])
            .map(|(k, s)| (k, (0..7).map(|i| angle_distance(s.q[i], target[i])).fold(0.0, f64::max)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let fmt = |q: &[f64; 7]| q.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" ");
        let (solution, dev, in_limits, pass) = match best {
            Some((k, d)) if d.to_degrees() <= TABLE2_TOL_DEG => {
                used[k] = true;
                let s = &set.solutions[k];
                (fmt(&s.q.to_degrees()), format!("{:.6}", d.to_degrees()), s.within_limits.to_string(), s.within_limits == r.in_limits)
            }
            _ => (String::new(), String::new(), String::new(), false),
        };
        all &= pass;
        rows.push(vec![
            r.row.to_string(),
            fmt(&r.q_deg()),
            solution,
            dev,
            r.in_limits.to_string(),
            in_limits,
            pass.to_string(),
        ]);
    }
    write_table(out, &header, &rows, format)?;
    Ok(if all { 0 } else { 1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(std::iter::once("yumi").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn fk_at_zero() {
        let (code, out, _) = run_capture(&["fk", "--joints", "0,0,0,0,0,0,0"]);
        assert_eq!(code, 0);
        let v: Value = serde_json::from_str(&out).unwrap();
        let p: Vec<f64> = serde_json::from_value(v["tool"]["p"].clone()).unwrap();
        assert!((p[0] - 341.5).abs() < 1e-9 && p[1].abs() < 1e-9 && (p[2] - 598.0).abs() < 1e-9, "{p:?}");
        assert!(v["psi_deg"]["abb"].is_number());
    }

    #[test]
    fn robotstudio_order_round_trips() {
        let (_, poe, _) = run_capture(&["fk", "--joints", "10,20,30,40,50,60,70"]);
        let (_, rs, _) = run_capture(&["fk", "--order", "rs", "--joints", "10,20,40,50,60,70,30"]);
        let (a, b): (Value, Value) = (serde_json::from_str(&poe).unwrap(), serde_json::from_str(&rs).unwrap());
        assert_eq!(a["tool"], b["tool"]);
    }

    #[test]
    fn malformed_input_exits_2() {
        assert_eq!(run_capture(&["fk", "--joints", "1,2,3"]).0, 2);
        assert_eq!(run_capture(&["frobnicate"]).0, 2);
        assert_eq!(run_capture(&["sew", "--ref", "0,0,0", "--joints", "0,0,0,0,0,0,0"]).0, 2);
        let (code, _, err) = run_capture(&["fk", "--format", "csv", "--joints", "0,0,0,0,0,0,0"]);
        assert_eq!(code, 2);
        assert!(serde_json::from_str::<Value>(&err).is_ok());
    }

    #[test]
    fn coordinate_singularity_exits_1_with_json() {
        // At q = 0 the shoulder-wrist line lies in the x-z plane; aim the
        // reference along it.
        let chain = forward_kinematics(&crate::model::yumi_params(), &JointVector::zeros());
        let g = crate::model::sew_geometry(&crate::model::yumi_params(), &chain).unwrap();
        let r = format!("{},{},{}", g.e_sw.x, g.e_sw.y, g.e_sw.z);
        let (code, _, err) = run_capture(&["sew", "--ref", &r, "--joints", "0,0,0,0,0,0,0"]);
        assert_eq!(code, 1);
        let v: Value = serde_json::from_str(&err).unwrap();
        assert_eq!(v["error"], "coordinate_singularity");
    }

    #[test]
    fn references_parse() {
        assert!(matches!(parse_reference("z"), Ok(Reference::WorldZ)));
        assert!(matches!(parse_reference("H1"), Ok(Reference::Joint1Axis)));
        assert!(matches!(parse_reference("custom:1,0,0"), Ok(Reference::Custom(_))));
        assert!(matches!(parse_reference("0,1,0"), Ok(Reference::Custom(_))));
        assert!(parse_reference("1,0").is_err());
    }

    #[test]
    fn table1_passes() {
        let (code, out, _) = run_capture(&["table1"]);
        assert_eq!(code, 0, "{out}");
        assert_eq!(out.lines().count(), 21);
    }

    #[test]
    fn ik_from_joints_contains_the_configuration() {
        let (code, out, _) = run_capture(&["ik", "--joints", "20,-40,30,-50,60,30,-40"]);
        assert_eq!(code, 0);
        let v: Vec<Value> = serde_json::from_str(&out).unwrap();
        let target = [20.0, -40.0, 30.0, -50.0, 60.0, 30.0, -40.0];
        assert!(v.iter().any(|s| {
            let q: Vec<f64> = serde_json::from_value(s["q_deg"].clone()).unwrap();
            q.iter().zip(target).all(|(a, b)| (a - b).abs() < 1e-6)
        }));
    }

    #[test]
    fn unreachable_ik_request_exits_1() {
        let dir = std::env::temp_dir().join(format!("yumi-cli-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("far.json");
        std::fs::write(&path, r#"{"R": [[1,0,0],[0,1,0],[0,0,1]], "p": [3000, 0, 0], "psi_deg": 0}"#).unwrap();
        let (code, _, err) = run_capture(&["ik", "--grid-step", "2", "--input", path.to_str().unwrap()]);
        assert_eq!(code, 1, "{err}");
        let bad = dir.join("bad.json");
        std::fs::write(&bad, r#"{"R": [[2,0,0],[0,1,0],[0,0,1]], "p": [300, 0, 0], "psi_deg": 0}"#).unwrap();
        assert_eq!(run_capture(&["ik", "--input", bad.to_str().unwrap()]).0, 2);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
