use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::mesh::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps.is_finite()
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid Adam parameters {self:?}")))
        }
    }

    fn corrections(&self, step: u64) -> (f64, f64) {
        let t = step.min(i32::MAX as u64) as i32;
        (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t))
    }
}

fn check_grads(grads: &[Vec3], n: usize, what: &str) -> Result<()> {
    if grads.len() != n {
        return Err(Error::ShapeMismatch(format!("{what}: {} gradients for {n} entries", grads.len())));
    }
    if let Some(i) = grads.iter().position(|g| !g.iter().all(|x| x.is_finite())) {
        return Err(Error::NonFinite(format!("{what}: gradient of entry {i} is {:?}", grads[i])));
    }
    Ok(())
}

/// VectorAdam state: per-vertex first moments and a per-vertex scalar second
/// moment of the squared gradient norm.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub step: u64,
    pub m: Vec<Vec3>,
    pub v: Vec<f64>,
    pub params: AdamParams,
}

impl OptimState {
    pub fn new(vertex_count: usize, params: AdamParams) -> Self {
        OptimState {
            step: 0,
            m: vec![Vec3::zeros(); vertex_count],
            v: vec![0.0; vertex_count],
            params,
        }
    }

    /// Advances the state and returns the per-vertex update. Non-finite or
    /// mis-sized gradients are rejected and leave the state untouched.
    pub fn vectoradam_step(&mut self, grads: &[Vec3]) -> Result<Vec<Vec3>> {
        check_grads(grads, self.m.len(), "vectoradam")?;
        let p = self.params;
        self.step += 1;
        let (c1, c2) = p.corrections(self.step);
        let mut delta = Vec::with_capacity(grads.len());
        for ((m, v), g) in self.m.iter_mut().zip(self.v.iter_mut()).zip(grads) {
            *m = *m * p.beta1 + g * (1.0 - p.beta1);
            *v = p.beta2 * *v + (1.0 - p.beta2) * g.norm_squared();
            let denom = (*v / c2).sqrt() + p.eps;
            delta.push(-(*m / c1) * (p.lr / denom));
        }
        Ok(delta)
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        write_header(w, self.step, self.m.len(), &self.params)?;
        for m in &self.m {
            write_f64s(w, m.as_slice())?;
        }
        write_f64s(w, &self.v)
    }

    pub fn read_from(r: &mut impl Read) -> std::io::Result<Self> {
        let (step, n, params) = read_header(r)?;
        let m = read_vec3s(r, n)?;
        let v = read_f64s(r, n)?;
        if v.iter().any(|x| !(*x >= 0.0)) {
            return Err(invalid("negative second moment"));
        }
        Ok(OptimState { step, m, v, params })
    }
}

/// Per-component Adam, used for vertex colors.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarAdamState {
    pub step: u64,
    pub m: Vec<Vec3>,
    pub v: Vec<Vec3>,
    pub params: AdamParams,
}

impl ScalarAdamState {
    pub fn new(count: usize, params: AdamParams) -> Self {
        ScalarAdamState {
            step: 0,
            m: vec![Vec3::zeros(); count],
            v: vec![Vec3::zeros(); count],
            params,
        }
    }

    pub fn adam_step(&mut self, grads: &[Vec3]) -> Result<Vec<Vec3>> {
        check_grads(grads, self.m.len(), "adam")?;
        let p = self.params;
        self.step += 1;
        let (c1, c2) = p.corrections(self.step);
        let mut delta = Vec::with_capacity(grads.len());
        for ((m, v), g) in self.m.iter_mut().zip(self.v.iter_mut()).zip(grads) {
            *m = *m * p.beta1 + g * (1.0 - p.beta1);
            *v = *v * p.beta2 + g.component_mul(g) * (1.0 - p.beta2);
            delta.push(Vec3::from_fn(|i, _| -p.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + p.eps)));
        }
        Ok(delta)
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        write_header(w, self.step, self.m.len(), &self.params)?;
        for x in self.m.iter().chain(&self.v) {
            write_f64s(w, x.as_slice())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> std::io::Result<Self> {
        let (step, n, params) = read_header(r)?;
        let m = read_vec3s(r, n)?;
        let v = read_vec3s(r, n)?;
        Ok(ScalarAdamState { step, m, v, params })
    }
}

fn invalid(msg: &str) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, msg.to_string())
}

fn write_f64s(w: &mut impl Write, xs: &[f64]) -> std::io::Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s(r: &mut impl Read, n: usize) -> std::io::Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}

fn read_vec3s(r: &mut impl Read, n: usize) -> std::io::Result<Vec<Vec3>> {
    Ok(read_f64s(r, 3 * n)?.chunks(3).map(Vec3::from_column_slice).collect())
}

fn write_header(w: &mut impl Write, step: u64, n: usize, p: &AdamParams) -> std::io::Result<()> {
    w.write_all(&step.to_le_bytes())?;
    w.write_all(&(n as u64).to_le_bytes())?;
    write_f64s(w, &[p.lr, p.beta1, p.beta2, p.eps])
}

fn read_header(r: &mut impl Read) -> std::io::Result<(u64, usize, AdamParams)> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    let step = u64::from_le_bytes(buf);
    r.read_exact(&mut buf)?;
    let n = usize::try_from(u64::from_le_bytes(buf)).map_err(|_| invalid("entry count overflows"))?;
    let p = read_f64s(r, 4)?;
    Ok((
        step,
        n,
        AdamParams {
            lr: p[0],
            beta1: p[1],
            beta2: p[2],
            eps: p[3],
        },
    ))
}
