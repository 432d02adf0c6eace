//! Coefficient fields and the built-in benchmark problems.

use crate::error::{MsfemError, Result};
use crate::mesh::Point;
use std::f64::consts::PI;
use std::sync::Arc;

pub type Matrix2 = [[f64; 2]; 2];
type ScalarFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(Point) -> Point + Send + Sync>;
type MatrixFn = Arc<dyn Fn(Point) -> Matrix2 + Send + Sync>;

/// Diffusion `A^eps`, advection `b` and load `f`, with coercivity bounds `m <= A <= M`.
#[derive(Clone)]
pub struct CoefficientField {
    pub dim: usize,
    diffusion: MatrixFn,
    advection: VectorFn,
    load: ScalarFn,
    pub eps: f64,
    pub alpha: f64,
    pub m: f64,
    pub big_m: f64,
}

impl std::fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoefficientField")
            .field("dim", &self.dim)
            .field("eps", &self.eps)
            .field("alpha", &self.alpha)
            .field("m", &self.m)
            .field("big_m", &self.big_m)
            .finish()
    }
}

impl CoefficientField {
    pub fn diffusion(&self, x: Point) -> Matrix2 {
        (self.diffusion)(x)
    }
    pub fn advection(&self, x: Point) -> Point {
        (self.advection)(x)
    }
    pub fn load(&self, x: Point) -> f64 {
        (self.load)(x)
    }
    /// Scalar diffusion used for Peclet numbers: trace / d.
    pub fn scalar_diffusion(&self, x: Point) -> f64 {
        let a = self.diffusion(x);
        if self.dim == 1 {
            a[0][0]
        } else {
            0.5 * (a[0][0] + a[1][1])
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Boundary {
    Homogeneous,
    /// 1D only: `u(0) = u0`, `u(1) = u1`.
    TwoPoint(f64, f64),
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub name: String,
    pub dim: usize,
    pub fields: CoefficientField,
    pub boundary: Boundary,
    /// Canonical description of the operator (diffusion and advection), used as a cache key.
    pub operator_key: String,
    /// Canonical description of the load.
    pub load_key: String,
}

fn scalar_diffusion(mu: ScalarFn, dim: usize) -> MatrixFn {
    if dim == 1 {
        Arc::new(move |x| [[mu(x), 0.0], [0.0, 0.0]])
    } else {
        Arc::new(move |x| {
            let v = mu(x);
            [[v, 0.0], [0.0, v]]
        })
    }
}

fn moderate_load(x: Point) -> f64 {
    2.0 + (2.0 * PI * x[0]).sin() + x[0] * (2.0 * PI * x[1]).cos()
}

impl Problem {
    /// `A = alpha (2 + cos(2 pi x / eps))`, `b = 1`, `f = sin^2(3 pi x)`.
    pub fn testcase_1d(alpha: f64, eps: f64) -> Result<Problem> {
        check_positive(alpha, eps)?;
        let mu: ScalarFn = Arc::new(move |x: Point| alpha * (2.0 + (2.0 * PI * x[0] / eps).cos()));
        let fields = CoefficientField {
            dim: 1,
            diffusion: scalar_diffusion(mu, 1),
            advection: Arc::new(|_| [1.0, 0.0]),
            load: Arc::new(|x: Point| (3.0 * PI * x[0]).sin().powi(2)),
            eps,
            alpha,
            m: alpha,
            big_m: 3.0 * alpha,
        };
        Ok(Problem {
            name: "1d".into(),
            dim: 1,
            fields,
            boundary: Boundary::Homogeneous,
            operator_key: format!("1d;alpha={alpha:?};eps={eps:?}"),
            load_key: "sin(3*pi*x)^2".into(),
        })
    }

    /// Moderate contrast oscillating diffusion with a normalized rotating advection field.
    pub fn testcase_2d_moderate(alpha: f64, eps: f64) -> Result<Problem> {
        check_positive(alpha, eps)?;
        let mu: ScalarFn = Arc::new(move |x: Point| {
            alpha * (1.0 + 0.75 * (2.0 * PI * x[0] / eps).cos() * (2.0 * PI * x[1] / eps).sin())
        });
        let fields = CoefficientField {
            dim: 2,
            diffusion: scalar_diffusion(mu, 2),
            advection: Arc::new(|p: Point| {
                let (x, y) = (p[0], p[1]);
                let n = (5.0 + 2.0 * y - 4.0 * x + y * y + x * x).sqrt();
                [(1.0 + y) / n, (2.0 - x) / n]
            }),
            load: Arc::new(moderate_load),
            eps,
            alpha,
            m: 0.25 * alpha,
            big_m: 1.75 * alpha,
        };
        Ok(Problem {
            name: "2d_moderate".into(),
            dim: 2,
            fields,
            boundary: Boundary::Homogeneous,
            operator_key: format!("2d_moderate;alpha={alpha:?};eps={eps:?}"),
            load_key: "2+sin(2*pi*x)+x*cos(2*pi*y)".into(),
        })
    }

    /// High contrast diffusion with a constant strong advection field.
    pub fn testcase_2d_contrast(alpha: f64, eps: f64) -> Result<Problem> {
        check_positive(alpha, eps)?;
        let mu: ScalarFn = Arc::new(move |x: Point| {
            let c = (PI * x[0] / eps).cos();
            let s = (PI * x[1] / eps).sin();
            alpha * (1.0 + 100.0 * c * c * s * s)
        });
        let theta = 0.3 * PI;
        let b = [50.0 * theta.cos(), 50.0 * theta.sin()];
        let fields = CoefficientField {
            dim: 2,
            diffusion: scalar_diffusion(mu, 2),
            advection: Arc::new(move |_| b),
            load: Arc::new(moderate_load),
            eps,
            alpha,
            m: alpha,
            big_m: 101.0 * alpha,
        };
        Ok(Problem {
            name: "2d_contrast".into(),
            dim: 2,
            fields,
            boundary: Boundary::Homogeneous,
            operator_key: format!("2d_contrast;alpha={alpha:?};eps={eps:?}"),
            load_key: "2+sin(2*pi*x)+x*cos(2*pi*y)".into(),
        })
    }

    /// Constant scalar diffusion `m`, constant advection `b`, constant load `f`.
    pub fn constant(dim: usize, m: f64, b: Point, f: f64) -> Result<Problem> {
        if !(m > 0.0) {
            return Err(MsfemError::InvalidInput(format!("diffusion must be positive, got {m}")));
        }
        let mu: ScalarFn = Arc::new(move |_| m);
        let bb = if dim == 1 { [b[0], 0.0] } else { b };
        let fields = CoefficientField {
            dim,
            diffusion: scalar_diffusion(mu, dim),
            advection: Arc::new(move |_| bb),
            load: Arc::new(move |_| f),
            eps: 1.0,
            alpha: m,
            m,
            big_m: m,
        };
        Ok(Problem {
            name: "constant".into(),
            dim,
            fields,
            boundary: Boundary::Homogeneous,
            operator_key: format!("constant{dim};m={m:?};b={bb:?}"),
            load_key: format!("{f:?}"),
        })
    }

    /// Problem from expression strings over `x, y, eps, alpha`.
    pub fn custom(dim: usize, alpha: f64, eps: f64, diffusion: &str, advection: [&str; 2], load: &str) -> Result<Problem> {
        if dim != 1 && dim != 2 {
            return Err(MsfemError::InvalidInput(format!("dimension must be 1 or 2, got {dim}")));
        }
        let mu = Expression::parse(diffusion, alpha, eps)?;
        let bx = Expression::parse(advection[0], alpha, eps)?;
        let by = if dim == 2 { Some(Expression::parse(advection[1], alpha, eps)?) } else { None };
        let f = Expression::parse(load, alpha, eps)?;
        // coercivity bounds are estimated by sampling; they are diagnostics only
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let steps = 64;
        for i in 0..=steps {
            for j in 0..=(if dim == 1 { 0 } else { steps }) {
                let v = mu.eval([i as f64 / steps as f64, j as f64 / steps as f64]);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        let mu_fn: ScalarFn = Arc::new(move |x| mu.eval(x));
        let fields = CoefficientField {
            dim,
            diffusion: scalar_diffusion(mu_fn, dim),
            advection: Arc::new(move |x| [bx.eval(x), by.as_ref().map_or(0.0, |e| e.eval(x))]),
            load: Arc::new(move |x| f.eval(x)),
            eps,
            alpha,
            m: lo,
            big_m: hi,
        };
        Ok(Problem {
            name: "custom".into(),
            dim,
            fields,
            boundary: Boundary::Homogeneous,
            operator_key: format!(
                "custom{dim};alpha={alpha:?};eps={eps:?};A={diffusion};b={};{}",
                advection[0],
                if dim == 2 { advection[1] } else { "" }
            ),
            load_key: load.to_string(),
        })
    }

    pub fn with_load<F>(mut self, key: &str, f: F) -> Problem
    where
        F: Fn(Point) -> f64 + Send + Sync + 'static,
    {
        self.fields.load = Arc::new(f);
        self.load_key = key.to_string();
        self
    }

    pub fn with_constant_load(self, value: f64) -> Problem {
        self.with_load(&format!("{value:?}"), move |_| value)
    }

    pub fn with_advection<F>(mut self, key: &str, b: F) -> Problem
    where
        F: Fn(Point) -> Point + Send + Sync + 'static,
    {
        self.fields.advection = Arc::new(b);
        self.operator_key = format!("{};b={key}", self.operator_key);
        self
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Result<Problem> {
        if let Boundary::TwoPoint(..) = boundary {
            if self.dim != 1 {
                return Err(MsfemError::InvalidInput("two-point boundary data is 1D only".into()));
            }
        }
        self.boundary = boundary;
        Ok(self)
    }
}

fn check_positive(alpha: f64, eps: f64) -> Result<()> {
    if alpha > 0.0 && eps > 0.0 && alpha.is_finite() && eps.is_finite() {
        Ok(())
    } else {
        Err(MsfemError::InvalidInput(format!("alpha and eps must be positive, got {alpha}, {eps}")))
    }
}

/// Closed-form scalar expression over `x, y, eps, alpha, pi`.
#[derive(Debug, Clone)]
pub struct Expression {
    expr: meval::Expr,
    alpha: f64,
    eps: f64,
}

struct Vars {
    x: f64,
    y: f64,
    alpha: f64,
    eps: f64,
}

impl meval::ContextProvider for Vars {
    fn get_var(&self, name: &str) -> Option<f64> {
        match name {
            "x" => Some(self.x),
            "y" => Some(self.y),
            "alpha" => Some(self.alpha),
            "eps" => Some(self.eps),
            "pi" => Some(PI),
            _ => None,
        }
    }

    fn eval_func(&self, name: &str, args: &[f64]) -> std::result::Result<f64, meval::FuncEvalError> {
        if args.len() != 1 {
            return Err(meval::FuncEvalError::NumberArgs(1));
        }
        let a = args[0];
        match name {
            "cos" => Ok(a.cos()),
            "sin" => Ok(a.sin()),
            "exp" => Ok(a.exp()),
            "sqrt" => Ok(a.sqrt()),
            _ => Err(meval::FuncEvalError::UnknownFunction),
        }
    }
}

impl Expression {
    pub fn parse(text: &str, alpha: f64, eps: f64) -> Result<Expression> {
        let expr: meval::Expr = text.parse().map_err(|e: meval::Error| MsfemError::Expression {
            expr: text.to_string(),
            message: e.to_string(),
        })?;
        let out = Expression { expr, alpha, eps };
        out.try_eval([0.25, 0.75]).map_err(|message| MsfemError::Expression { expr: text.to_string(), message })?;
        Ok(out)
    }

    fn try_eval(&self, p: Point) -> std::result::Result<f64, String> {
        self.expr
            .eval_with_context(Vars { x: p[0], y: p[1], alpha: self.alpha, eps: self.eps })
            .map_err(|e| e.to_string())
    }

    pub fn eval(&self, p: Point) -> f64 {
        self.try_eval(p).unwrap_or(f64::NAN)
    }
}
