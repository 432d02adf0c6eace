//! Flat `key = value` run configuration.
//!
//! ```text
//! # Fig-4-like sweep
//! testcase = 1d
//! eps = 2^-6
//! alpha_exponents = 1..12
//! coarse_exponent = 4
//! fine = auto
//! fine_cap = 13
//! methods = P1, P1_SUPG, MsFEM_lin, PG_Adv_MsFEM_CR_beta:nonintrusive
//! output = sweep.csv
//! ```

use crate::error::{MsfemError, Result};
use crate::fem::FormKind;
use crate::offline::MuBarRule;
use crate::online::{Method, MethodSpec, Pathway};
use crate::problem::{Boundary, Expression, Problem};
use std::collections::BTreeMap;
use std::path::PathBuf;

#[derive(Debug, Clone, PartialEq)]
pub enum TestCase {
    OneD,
    Moderate,
    Contrast,
    /// Constant diffusion `alpha`, constant advection, load from `load` (default 1).
    Constant { b: [f64; 2] },
    Custom { diffusion: String, advection: [String; 2] },
}

/// Fine mesh size `h = 2^-m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FineRule {
    Exponent(u32),
    /// `h = 2^-5 min(eps, alpha)`, rounded down to a power of two, with `m` at most `cap`.
    Auto { cap: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub testcase: TestCase,
    pub dim: usize,
    pub eps: f64,
    pub alphas: Vec<f64>,
    pub coarse_exponent: u32,
    pub fine: FineRule,
    pub methods: Vec<MethodSpec>,
    pub form: FormKind,
    pub mu_bar: MuBarRule,
    pub load: Option<String>,
    pub boundary: Boundary,
    pub output: Option<PathBuf>,
    pub dump_dir: Option<PathBuf>,
    pub basis_cache: Option<PathBuf>,
    pub workers: usize,
    pub allow_singular: bool,
    /// Write wall-clock timings; turn off for byte-reproducible CSV files.
    pub timings: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            testcase: TestCase::OneD,
            dim: 1,
            eps: 2f64.powi(-6),
            alphas: vec![2f64.powi(-1)],
            coarse_exponent: 4,
            fine: FineRule::Auto { cap: 13 },
            methods: vec![MethodSpec::new(Method::P1)],
            form: FormKind::Standard,
            mu_bar: MuBarRule::MinMaxMean,
            load: None,
            boundary: Boundary::Homogeneous,
            output: None,
            dump_dir: None,
            basis_cache: None,
            workers: 1,
            allow_singular: false,
            timings: true,
        }
    }
}

const KEYS: &[&str] = &[
    "testcase",
    "dimension",
    "eps",
    "alpha",
    "alpha_exponents",
    "coarse_exponent",
    "fine",
    "fine_exponent",
    "fine_cap",
    "methods",
    "form",
    "mu_bar",
    "load",
    "diffusion",
    "advection",
    "boundary",
    "output",
    "dump_dir",
    "basis_cache",
    "workers",
    "allow_singular",
    "timings",
];

/// Numbers may be written as expressions such as `2^-7` or `0.3*pi`.
pub fn parse_number(text: &str) -> std::result::Result<f64, String> {
    let v = Expression::parse(text, 0.0, 0.0).map_err(|e| e.to_string())?.eval([0.0, 0.0]);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{text}` is not a finite number"))
    }
}

fn parse_bool(text: &str) -> std::result::Result<bool, String> {
    match text {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got `{text}`")),
    }
}

fn parse_list(text: &str) -> std::result::Result<Vec<f64>, String> {
    text.split(',').map(|s| parse_number(s.trim())).collect()
}

/// `Name` or `Name:pathway`, in the standard form.
pub fn parse_method(text: &str) -> std::result::Result<MethodSpec, String> {
    let (name, pathway) = match text.split_once(':') {
        Some((n, p)) => (n, p.parse::<Pathway>().map_err(|e| e.to_string())?),
        None => (text, Pathway::Intrusive),
    };
    let method: Method = name.parse().map_err(|e: MsfemError| e.to_string())?;
    Ok(MethodSpec { method, form: FormKind::Standard, pathway })
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let err = |key: &str, message: String| MsfemError::Config { line: i + 1, key: key.to_string(), message };
            let Some((k, v)) = line.split_once('=') else {
                return Err(err("", format!("expected `key = value`, got `{line}`")));
            };
            let key = k.trim().to_string();
            if !KEYS.contains(&key.as_str()) {
                return Err(err(&key, "unknown key".into()));
            }
            if entries.insert(key.clone(), (i + 1, v.trim().to_string())).is_some() {
                return Err(err(&key, "key given twice".into()));
            }
        }
        let mut c = RunConfig::default();
        let get = |k: &str| entries.get(k).map(|(l, v)| (*l, v.as_str()));
        let fail = |k: &str, message: String| -> MsfemError {
            let line = entries.get(k).map_or(0, |e| e.0);
            MsfemError::Config { line, key: k.to_string(), message }
        };
        macro_rules! field {
            ($key:expr, $parse:expr) => {
                match get($key) {
                    Some((_, v)) => Some($parse(v).map_err(|m: String| fail($key, m))?),
                    None => None,
                }
            };
        }

        let testcase = get("testcase").map_or("1d", |e| e.1).to_string();
        let dim_given: Option<usize> = field!("dimension", |v: &str| v.parse::<usize>().map_err(|e| e.to_string()));
        c.testcase = match testcase.as_str() {
            "1d" => TestCase::OneD,
            "2d_moderate" | "moderate" => TestCase::Moderate,
            "2d_contrast" | "contrast" => TestCase::Contrast,
            "constant" => {
                let b = field!("advection", |v: &str| -> std::result::Result<Vec<f64>, String> { parse_list(v) })
                    .unwrap_or_else(|| vec![1.0, 0.0]);
                TestCase::Constant { b: [b[0], *b.get(1).unwrap_or(&0.0)] }
            }
            "custom" => {
                let diffusion = get("diffusion").ok_or_else(|| fail("testcase", "custom needs `diffusion`".into()))?.1;
                let adv = get("advection").ok_or_else(|| fail("testcase", "custom needs `advection`".into()))?.1;
                let parts: Vec<&str> = adv.split(',').map(str::trim).collect();
                TestCase::Custom {
                    diffusion: diffusion.to_string(),
                    advection: [parts[0].to_string(), parts.get(1).unwrap_or(&"0").to_string()],
                }
            }
            other => return Err(fail("testcase", format!("unknown test case `{other}`"))),
        };
        c.dim = match (&c.testcase, dim_given) {
            (TestCase::OneD, Some(d)) if d != 1 => return Err(fail("dimension", "the 1d test case is one-dimensional".into())),
            (TestCase::OneD, _) => 1,
            (TestCase::Moderate | TestCase::Contrast, Some(d)) if d != 2 => {
                return Err(fail("dimension", "this test case is two-dimensional".into()))
            }
            (TestCase::Moderate | TestCase::Contrast, _) => 2,
            (_, Some(d)) if d == 1 || d == 2 => d,
            (_, Some(d)) => return Err(fail("dimension", format!("dimension must be 1 or 2, got {d}"))),
            (_, None) => 2,
        };
        if let Some(e) = field!("eps", parse_number) {
            if !(e > 0.0) {
                return Err(fail("eps", "eps must be positive".into()));
            }
            c.eps = e;
        }
        match (get("alpha"), get("alpha_exponents")) {
            (Some(_), Some(_)) => return Err(fail("alpha_exponents", "give either `alpha` or `alpha_exponents`".into())),
            (Some(_), None) => c.alphas = field!("alpha", parse_list).unwrap(),
            (None, Some(_)) => {
                c.alphas = field!("alpha_exponents", |v: &str| -> std::result::Result<Vec<f64>, String> {
                    let (a, b) = v.split_once("..").ok_or("expected a range such as `1..12`")?;
                    let a: i32 = a.trim().parse().map_err(|_| format!("bad exponent `{a}`"))?;
                    let b: i32 = b.trim().parse().map_err(|_| format!("bad exponent `{b}`"))?;
                    if a > b {
                        return Err("empty exponent range".into());
                    }
                    Ok((a..=b).map(|k| 2f64.powi(-k)).collect())
                })
                .unwrap()
            }
            (None, None) => {}
        }
        if c.alphas.is_empty() || c.alphas.iter().any(|a| !(*a > 0.0)) {
            return Err(fail("alpha", "alpha values must be positive".into()));
        }
        if let Some(k) = field!("coarse_exponent", |v: &str| v.parse::<u32>().map_err(|e| e.to_string())) {
            if k < 1 {
                return Err(fail("coarse_exponent", "need at least two coarse elements per side".into()));
            }
            c.coarse_exponent = k;
        }
        let cap = field!("fine_cap", |v: &str| v.parse::<u32>().map_err(|e| e.to_string())).unwrap_or(13);
        c.fine = match (get("fine"), get("fine_exponent")) {
            (Some((_, "auto")), None) | (None, None) => FineRule::Auto { cap },
            (Some(_), None) => return Err(fail("fine", "only `auto` is understood; use `fine_exponent` for a fixed h".into())),
            (None, Some(_)) => FineRule::Exponent(field!("fine_exponent", |v: &str| v.parse::<u32>().map_err(|e| e.to_string())).unwrap()),
            (Some(_), Some(_)) => return Err(fail("fine_exponent", "give either `fine` or `fine_exponent`".into())),
        };
        if let FineRule::Exponent(m) = c.fine {
            if m <= c.coarse_exponent {
                return Err(fail("fine_exponent", "h must be a proper dyadic refinement of H".into()));
            }
        }
        if let Some(form) = field!("form", |v: &str| v.parse::<FormKind>().map_err(|e| e.to_string())) {
            c.form = form;
        }
        if let Some(m) = field!("mu_bar", |v: &str| v.parse::<MuBarRule>().map_err(|e| e.to_string())) {
            c.mu_bar = m;
        }
        if let Some(ms) = field!("methods", |v: &str| v.split(',').map(|s| parse_method(s.trim())).collect::<std::result::Result<Vec<_>, _>>()) {
            c.methods = ms;
        }
        if c.methods.is_empty() {
            return Err(fail("methods", "method list is empty".into()));
        }
        for m in c.methods.iter_mut() {
            m.form = c.form;
            *m = m.validated().map_err(|e| fail("methods", e.to_string()))?;
        }
        c.load = get("load").map(|e| e.1.to_string());
        if let Some(b) = field!("boundary", |v: &str| -> std::result::Result<Boundary, String> {
            if v == "homogeneous" {
                Ok(Boundary::Homogeneous)
            } else {
                let l = parse_list(v)?;
                if l.len() != 2 {
                    return Err("expected `homogeneous` or two values `u0, u1`".into());
                }
                Ok(Boundary::TwoPoint(l[0], l[1]))
            }
        }) {
            if matches!(b, Boundary::TwoPoint(..)) && c.dim != 1 {
                return Err(fail("boundary", "two-point boundary data is 1D only".into()));
            }
            c.boundary = b;
        }
        c.output = get("output").map(|e| PathBuf::from(e.1));
        c.dump_dir = get("dump_dir").map(|e| PathBuf::from(e.1));
        c.basis_cache = get("basis_cache").map(|e| PathBuf::from(e.1));
        if let Some(w) = field!("workers", |v: &str| v.parse::<usize>().map_err(|e| e.to_string())) {
            c.workers = w.max(1);
        }
        if let Some(b) = field!("allow_singular", parse_bool) {
            c.allow_singular = b;
        }
        if let Some(b) = field!("timings", parse_bool) {
            c.timings = b;
        }
        // validate expressions now, not in the middle of a sweep
        if let Some(load) = &c.load {
            Expression::parse(load, c.alphas[0], c.eps).map_err(|e| fail("load", e.to_string()))?;
        }
        if let TestCase::Custom { diffusion, advection } = &c.testcase {
            Expression::parse(diffusion, c.alphas[0], c.eps).map_err(|e| fail("diffusion", e.to_string()))?;
            for a in advection {
                Expression::parse(a, c.alphas[0], c.eps).map_err(|e| fail("advection", e.to_string()))?;
            }
        }
        Ok(c)
    }

    pub fn from_file(path: &std::path::Path) -> Result<RunConfig> {
        RunConfig::parse(&std::fs::read_to_string(path)?)
    }

    /// Fine exponent `m` (with `h = 2^-m`) used at a given `alpha`.
    pub fn fine_exponent(&self, alpha: f64) -> u32 {
        match self.fine {
            FineRule::Exponent(m) => m,
            FineRule::Auto { cap } => {
                let h = 2f64.powi(-5) * self.eps.min(alpha);
                let m = (-h.log2() - 1e-9).ceil().max(0.0) as u32;
                m.min(cap).max(self.coarse_exponent + 1)
            }
        }
    }

    pub fn levels(&self, alpha: f64) -> usize {
        (self.fine_exponent(alpha) - self.coarse_exponent) as usize
    }

    pub fn coarse_n(&self) -> usize {
        1usize << self.coarse_exponent
    }

    /// The problem at one sweep point.
    pub fn problem(&self, alpha: f64) -> Result<Problem> {
        let eps = self.eps;
        let mut p = match &self.testcase {
            TestCase::OneD => Problem::testcase_1d(alpha, eps)?,
            TestCase::Moderate => Problem::testcase_2d_moderate(alpha, eps)?,
            TestCase::Contrast => Problem::testcase_2d_contrast(alpha, eps)?,
            TestCase::Constant { b } => Problem::constant(self.dim, alpha, *b, 1.0)?,
            TestCase::Custom { diffusion, advection } => {
                Problem::custom(self.dim, alpha, eps, diffusion, [&advection[0], &advection[1]], self.load.as_deref().unwrap_or("1"))?
            }
        };
        if let Some(load) = &self.load {
            let f = Expression::parse(load, alpha, eps)?;
            p = p.with_load(load, move |x| f.eval(x));
        }
        p.with_boundary(self.boundary)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_sweep() {
        let c = RunConfig::parse(
            "testcase = 1d\neps = 2^-6\nalpha_exponents = 1..12\ncoarse_exponent = 4\n# comment\nmethods = P1, PG_Adv_MsFEM_CR_beta:nonintrusive\n",
        )
        .unwrap();
        assert_eq!(c.alphas.len(), 12);
        assert_eq!(c.alphas[11], 2f64.powi(-12));
        assert_eq!(c.methods[1].pathway, Pathway::NonIntrusive);
        // h = 2^-5 min(eps, alpha) capped at 2^-13
        assert_eq!(c.fine_exponent(0.5), 11);
        assert_eq!(c.fine_exponent(2f64.powi(-12)), 13);
        assert_eq!(c.levels(0.5), 7);
    }

    #[test]
    fn errors_carry_line_and_key() {
        match RunConfig::parse("eps = 0.1\nbogus = 3\n") {
            Err(MsfemError::Config { line, key, .. }) => assert_eq!((line, key.as_str()), (2, "bogus")),
            other => panic!("{other:?}"),
        }
        match RunConfig::parse("methods = P1\neps = -1\n") {
            Err(MsfemError::Config { line, key, .. }) => assert_eq!((line, key.as_str()), (2, "eps")),
            other => panic!("{other:?}"),
        }
        assert!(RunConfig::parse("methods =\n").is_err());
        assert!(RunConfig::parse("methods = Adv_MsFEM_CR:nonintrusive\n").is_err());
        assert!(RunConfig::parse("testcase = 2d_moderate\nboundary = 0, 1\n").is_err());
        assert!(RunConfig::parse("coarse_exponent = 4\nfine_exponent = 3\n").is_err());
        assert!(RunConfig::parse("load = sin(\n").is_err());
    }

    #[test]
    fn custom_problem_from_expressions() {
        let c = RunConfig::parse(
            "testcase = custom\ndimension = 2\ndiffusion = alpha*(1+0.75*cos(2*pi*x/eps)*sin(2*pi*y/eps))\nadvection = 1, 0.5\nload = 2\neps = 2^-4\nalpha = 0.1\n",
        )
        .unwrap();
        let p = c.problem(0.1).unwrap();
        assert_eq!(p.fields.advection([0.3, 0.3]), [1.0, 0.5]);
        assert_eq!(p.fields.load([0.3, 0.3]), 2.0);
        let q = Problem::testcase_2d_moderate(0.1, 2f64.powi(-4)).unwrap();
        let x = [0.3, 0.7];
        assert!((p.fields.diffusion(x)[0][0] - q.fields.diffusion(x)[0][0]).abs() < 1e-14);
    }

    #[test]
    fn numbers_accept_expressions() {
        assert_eq!(parse_number("2^-7").unwrap(), 2f64.powi(-7));
        assert!(parse_number("x +").is_err());
    }
}
