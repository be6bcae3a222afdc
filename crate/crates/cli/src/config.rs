//! Run configuration: a plain key=value file merged with command-line
//! flags, flags winning. Keys use the same names as the long flags.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use deed_core::fixed_point::Init;
use deed_core::tensor::TensorKind;
use deed_core::{default_eps_data, ModelParams, SolverOpts};

/// Values loaded from a `key=value` file (`#` comments, blank lines ok).
#[derive(Debug, Default)]
pub struct KeyValues {
    entries: HashMap<String, String>,
}

impl KeyValues {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path)
            .map_err(|e| format!("cannot read config file {}: {e}", path.display()))?;
        let mut entries = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                format!("config line {}: expected key=value, got '{raw}'", lineno + 1)
            })?;
            entries.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Self { entries })
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, String> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| format!("config key '{key}': cannot parse '{raw}'")),
        }
    }
}

/// Typed lookup for subcommands that merge a few ad-hoc keys.
pub fn lookup<T: std::str::FromStr>(file: &KeyValues, key: &str) -> Result<Option<T>, String> {
    file.get(key)
}

fn pick<T>(flag: Option<T>, file: Result<Option<T>, String>, default: T) -> Result<T, String> {
    Ok(flag.or(file?).unwrap_or(default))
}

fn pick_required<T>(
    flag: Option<T>,
    file: Result<Option<T>, String>,
    what: &str,
) -> Result<T, String> {
    flag.or(file?).ok_or_else(|| format!("missing required {what}"))
}

/// Raw optional values from flags; merged against the config file by the
/// builder functions below.
#[derive(Debug, Default, Clone)]
pub struct RawParams {
    pub lambda: Option<f64>,
    pub t: Option<f64>,
    pub sigma: Option<f64>,
    pub mu: Option<f64>,
    pub delta: Option<f64>,
    pub p_weight: Option<f64>,
    pub eps_weight: Option<f64>,
    pub s: Option<f64>,
    pub lambda_pre: Option<f64>,
    pub eps_data: Option<f64>,
    pub tol_inner: Option<f64>,
}

pub fn merge_params(raw: &RawParams, file: &KeyValues) -> Result<ModelParams, String> {
    let defaults = ModelParams::default();
    let t = pick(raw.t, file.get("t"), defaults.t)?;
    let params = ModelParams {
        lambda: pick(raw.lambda, file.get("lambda"), defaults.lambda)?,
        t,
        sigma: pick(raw.sigma, file.get("sigma"), defaults.sigma)?,
        mu: pick(raw.mu, file.get("mu"), defaults.mu)?,
        delta: pick(raw.delta, file.get("delta"), defaults.delta)?,
        p_weight: pick(raw.p_weight, file.get("p_weight"), defaults.p_weight)?,
        eps_weight: pick(raw.eps_weight, file.get("eps_weight"), defaults.eps_weight)?,
        s: pick(raw.s, file.get("s"), defaults.s)?,
        lambda_pre: pick(raw.lambda_pre, file.get("lambda_pre"), defaults.lambda_pre)?,
        eps_data: pick(raw.eps_data, file.get("eps_data"), default_eps_data(t))?,
        solver: SolverOpts {
            tol_inner: pick(
                raw.tol_inner,
                file.get("tol_inner"),
                SolverOpts::default().tol_inner,
            )?,
            ..SolverOpts::default()
        },
    };
    params.validate().map_err(|e| e.to_string())?;
    Ok(params)
}

#[derive(Debug)]
pub struct DenoiseConfig {
    pub input: PathBuf,
    pub mask: Option<PathBuf>,
    pub output: PathBuf,
    pub trace: Option<PathBuf>,
    pub tensor: TensorKind,
    pub params: ModelParams,
    pub max_outer: usize,
    pub tol_fp: f64,
    pub tol_residual: f64,
    pub damping: f64,
    pub init: Init<f64>,
}

#[derive(Debug, Default, Clone)]
pub struct RawDenoise {
    pub input: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub tensor: Option<String>,
    pub params: RawParams,
    pub max_outer: Option<usize>,
    pub tol_fp: Option<f64>,
    pub tol_residual: Option<f64>,
    pub damping: Option<f64>,
    pub init: Option<String>,
}

pub fn build_denoise(raw: &RawDenoise, file: &KeyValues) -> Result<DenoiseConfig, String> {
    let tensor_name: String = pick(raw.tensor.clone(), file.get("tensor"), "eed".into())?;
    let tensor: TensorKind = tensor_name.parse().map_err(|e| format!("{e}"))?;
    let init_name: String = pick(raw.init.clone(), file.get("init"), "data".into())?;
    let init = match init_name.as_str() {
        "data" => Init::Data,
        "zero" => Init::Zero,
        other => return Err(format!("unknown init '{other}' (expected data | zero)")),
    };
    let config = DenoiseConfig {
        input: pick_required(raw.input.clone(), file.get("input"), "--input path")?,
        mask: match raw.mask.clone() {
            Some(p) => Some(p),
            None => file.get("mask")?,
        },
        output: pick_required(raw.output.clone(), file.get("output"), "--output path")?,
        trace: match raw.trace.clone() {
            Some(p) => Some(p),
            None => file.get("trace")?,
        },
        tensor,
        params: merge_params(&raw.params, file)?,
        max_outer: pick(raw.max_outer, file.get("max_outer"), 200)?,
        tol_fp: pick(raw.tol_fp, file.get("tol_fp"), 1e-6)?,
        tol_residual: pick(raw.tol_residual, file.get("tol_residual"), 1e-6)?,
        damping: pick(raw.damping, file.get("damping"), 1.0)?,
        init,
    };
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file_with(content: &str) -> (tempfile::TempDir, KeyValues) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        let kv = KeyValues::load(&path).unwrap();
        (dir, kv)
    }

    #[test]
    fn file_values_fill_in_and_flags_override() {
        let (_dir, kv) = file_with(
            "# sweep config\nlambda = 4.0\ntensor=weighted\ninput=in.pgm\noutput=out.pgm\n",
        );
        let mut raw = RawDenoise::default();
        let cfg = build_denoise(&raw, &kv).unwrap();
        assert_eq!(cfg.params.lambda, 4.0);
        assert_eq!(cfg.tensor, TensorKind::Weighted);

        raw.params.lambda = Some(9.0);
        raw.tensor = Some("eed".into());
        let cfg = build_denoise(&raw, &kv).unwrap();
        assert_eq!(cfg.params.lambda, 9.0);
        assert_eq!(cfg.tensor, TensorKind::Eed);
    }

    #[test]
    fn missing_required_paths_are_reported() {
        let (_dir, kv) = file_with("lambda=1\n");
        let err = build_denoise(&RawDenoise::default(), &kv).unwrap_err();
        assert!(err.contains("input"));
    }

    #[test]
    fn sub_quadratic_t_gets_default_smoothing() {
        let (_dir, kv) = file_with("t=1.5\ninput=a.pgm\noutput=b.pgm\n");
        let cfg = build_denoise(&RawDenoise::default(), &kv).unwrap();
        assert_eq!(cfg.params.eps_data, 1e-9);
    }

    #[test]
    fn malformed_lines_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.conf");
        fs::write(&path, "lambda 300\n").unwrap();
        assert!(KeyValues::load(&path).is_err());
    }
}
