//! Independent oracles shared by the integration and acceptance tests.
//!
//! Nothing here calls into the library's geometry or solver code: norms,
//! ball boundaries and ellipsoid boundaries are recomputed from scratch.

#![allow(dead_code, clippy::too_many_arguments)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub type V = DVector<f64>;

/// Test-side norm, evaluated by hand.
#[derive(Debug, Clone)]
pub enum Norm {
    L1,
    L2,
    Winf(V),
    Maha(DMatrix<f64>),
}

impl Norm {
    pub fn value(&self, v: &V) -> f64 {
        match self {
            Norm::L1 => v.iter().map(|x| x.abs()).sum(),
            Norm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Norm::Winf(w) => v.iter().zip(w.iter()).map(|(x, w)| w * x.abs()).fold(0.0, f64::max),
            Norm::Maha(a) => (v.transpose() * a * v)[(0, 0)].sqrt(),
        }
    }

    pub fn to_spec(&self) -> recourse_bandit::NormSpec {
        use recourse_bandit::NormSpec;
        match self {
            Norm::L1 => NormSpec::l1(),
            Norm::L2 => NormSpec::l2(),
            Norm::Winf(w) => NormSpec::weighted_linf(w.clone()).unwrap(),
            Norm::Maha(a) => NormSpec::mahalanobis(a.clone()).unwrap(),
        }
    }

    /// Extreme points of the unit ball for the polyhedral families.
    pub fn vertices(&self, d: usize) -> Vec<V> {
        match self {
            Norm::L1 => (0..d)
                .flat_map(|i| {
                    [1.0, -1.0].map(|s| {
                        let mut e = V::zeros(d);
                        e[i] = s;
                        e
                    })
                })
                .collect(),
            Norm::Winf(w) => (0..1usize << d)
                .map(|mask| V::from_fn(d, |i, _| if mask >> i & 1 == 1 { 1.0 } else { -1.0 } / w[i]))
                .collect(),
            _ => Vec::new(),
        }
    }
}

/// Unit directions: both signs for d = 1, `n` angles for d = 2 and an
/// `n × n/2` latitude-longitude grid (poles and axes included) for d = 3.
pub fn sphere_dirs(d: usize, n: usize) -> Vec<V> {
    match d {
        1 => vec![V::from_element(1, 1.0), V::from_element(1, -1.0)],
        2 => (0..n)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / n as f64;
                V::from_vec(vec![a.cos(), a.sin()])
            })
            .collect(),
        3 => {
            let m = n / 2;
            let mut out = vec![V::from_vec(vec![0.0, 0.0, 1.0]), V::from_vec(vec![0.0, 0.0, -1.0])];
            for j in 1..m {
                let polar = std::f64::consts::PI * j as f64 / m as f64;
                for i in 0..n {
                    let az = std::f64::consts::TAU * i as f64 / n as f64;
                    out.push(V::from_vec(vec![polar.sin() * az.cos(), polar.sin() * az.sin(), polar.cos()]));
                }
            }
            out
        }
        _ => panic!("grids only for d <= 3"),
    }
}

/// Points on `{x : ‖x − center‖ = radius}` (plus vertices for polyhedral norms).
pub fn ball_boundary(norm: &Norm, center: &V, radius: f64, n: usize) -> Vec<V> {
    let d = center.len();
    let mut dirs: Vec<V> = sphere_dirs(d, n).into_iter().map(|u| &u / norm.value(&u)).collect();
    dirs.extend(norm.vertices(d));
    dirs.into_iter().map(|u| center + u * radius).collect()
}

/// Points on `{θ : ‖θ − c‖_V = ρ}`.
pub fn ellipsoid_boundary(c: &V, design: &DMatrix<f64>, rho: f64, n: usize) -> Vec<V> {
    let l = design.clone().cholesky().expect("positive definite").l();
    let lt = l.transpose();
    sphere_dirs(c.len(), n)
        .into_iter()
        .map(|u| c + lt.solve_upper_triangular(&u).unwrap() * rho)
        .collect()
}

/// `λI + Σ x xᵀ` over a few random rows.
pub fn random_design<R: Rng>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let mut m = DMatrix::identity(d, d) * rng.random_range(0.2..1.5);
    for _ in 0..rng.random_range(0..6) {
        let x = gaussian(d, rng);
        m += &x * x.transpose();
    }
    m
}

pub fn gaussian<R: Rng>(d: usize, rng: &mut R) -> V {
    V::from_fn(d, |_, _| rng.sample(StandardNormal))
}

pub fn random_spd<R: Rng>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let b = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    &b * b.transpose() + DMatrix::identity(d, d) * 0.5
}

pub fn random_norm<R: Rng>(kind: usize, d: usize, rng: &mut R) -> Norm {
    match kind % 4 {
        0 => Norm::L1,
        1 => Norm::L2,
        2 => Norm::Winf(V::from_fn(d, |_, _| rng.random_range(0.3..3.0))),
        _ => Norm::Maha(random_spd(d, rng)),
    }
}

pub fn concat(a: &V, b: &V) -> V {
    V::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

/// `max_θ∈Θ θᵀz = cᵀz + ρ√(zᵀV⁻¹z)` with an explicit inverse.
pub fn support_value(c: &V, design: &DMatrix<f64>, rho: f64, z: &V) -> f64 {
    let inv = design.clone().try_inverse().expect("invertible");
    c.dot(z) + rho * (z.transpose() * inv * z)[(0, 0)].max(0.0).sqrt()
}

/// Grid maximum of the optimistic objective over recourses on the ball boundary.
pub fn oro_grid_max(x_i: &V, x_m: &V, gamma: f64, norm: &Norm, c: &V, design: &DMatrix<f64>, rho: f64, n: usize) -> f64 {
    ball_boundary(norm, x_m, gamma, n)
        .iter()
        .map(|r| support_value(c, design, rho, &concat(x_i, r)))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// One scripted reply of the stub server.
#[derive(Debug, Clone)]
pub enum Reply {
    Status(u16, String),
    /// Accept, read the request, then stay silent for this long.
    Hang(Duration),
}

/// OpenAI-style chat-completion body carrying `content`.
pub fn completion(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

/// Minimal HTTP/1.1 server answering one connection per scripted reply.
/// Replies past the script repeat the last entry.
pub struct StubServer {
    pub url: String,
    pub requests: Arc<Mutex<Vec<String>>>,
    _handle: JoinHandle<()>,
}

impl StubServer {
    pub fn start(script: Vec<Reply>, max_connections: usize) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let seen = Arc::clone(&requests);
        let handle = std::thread::spawn(move || {
            for (i, stream) in listener.incoming().take(max_connections).enumerate() {
                let Ok(mut stream) = stream else { continue };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut length = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some((k, v)) = line.split_once(':') {
                        if k.eq_ignore_ascii_case("content-length") {
                            length = v.trim().parse().unwrap_or(0);
                        }
                    }
                }
                let mut body = vec![0u8; length];
                let _ = reader.read_exact(&mut body);
                seen.lock().unwrap().push(String::from_utf8_lossy(&body).into_owned());
                match script.get(i).or(script.last()).cloned() {
                    Some(Reply::Status(code, text)) => {
                        let resp = format!(
                            "HTTP/1.1 {code} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                            text.len()
                        );
                        let _ = stream.write_all(resp.as_bytes());
                    }
                    Some(Reply::Hang(d)) => std::thread::sleep(d),
                    None => {}
                }
            }
        });
        Self {
            url,
            requests,
            _handle: handle,
        }
    }

    pub fn request_count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

/// Nested-grid max-min for the ε-adversary problem:
/// `max_θ max_x̌ min_δ θᵀ(x_I, x̌ + δ)` with `θ` on the ellipsoid boundary,
/// `x̌` on the γ-sphere and `δ` on the ε-sphere. Valid for `ε ≤ γ`, where
/// the outer objective is convex in `θ`. The inner min does not depend on
/// `x̌`, so the two inner grids are scanned separately.
pub fn nc_grid_max(
    x_i: &V,
    x_m: &V,
    gamma: f64,
    epsilon: f64,
    norm: &Norm,
    c: &V,
    design: &DMatrix<f64>,
    rho: f64,
    n_theta: usize,
    n_ball: usize,
) -> f64 {
    let d_i = x_i.len();
    let recourses = ball_boundary(norm, x_m, gamma, n_ball);
    let zero = V::zeros(x_m.len());
    let shifts = ball_boundary(norm, &zero, epsilon, n_ball);
    ellipsoid_boundary(c, design, rho, n_theta)
        .iter()
        .map(|th| {
            let ti = th.rows(0, d_i);
            let tm = th.rows(d_i, x_m.len());
            let best = recourses.iter().map(|r| tm.dot(r)).fold(f64::NEG_INFINITY, f64::max);
            let worst = shifts.iter().map(|s| tm.dot(s)).fold(f64::INFINITY, f64::min);
            ti.dot(x_i) + best + worst
        })
        .fold(f64::NEG_INFINITY, f64::max)
}
