//! Forward implementations and backward rules for the closed op set.

use super::{ConvPadding, Tensor};
use crate::error::{Error, Result};

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(())
}

fn dims2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    let s = t.shape();
    if s.len() != 2 {
        return Err(Error::invalid(format!("{op}: expected 2-D tensor, got {s:?}")));
    }
    Ok((s[0], s[1]))
}

impl Tensor {
    // ── elementwise binary ───────────────────────────────────────────

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        same_shape("add", self, rhs)?;
        let v: Vec<f64> = self
            .values()
            .iter()
            .zip(rhs.values())
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor::from_op(
            self.shape(),
            v,
            vec![self.clone(), rhs.clone()],
            Box::new(|og, _, _| vec![og.to_vec(), og.to_vec()]),
        ))
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        same_shape("sub", self, rhs)?;
        let v: Vec<f64> = self
            .values()
            .iter()
            .zip(rhs.values())
            .map(|(a, b)| a - b)
            .collect();
        Ok(Tensor::from_op(
            self.shape(),
            v,
            vec![self.clone(), rhs.clone()],
            Box::new(|og, _, _| vec![og.to_vec(), og.iter().map(|g| -g).collect()]),
        ))
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        same_shape("mul", self, rhs)?;
        let v: Vec<f64> = self
            .values()
            .iter()
            .zip(rhs.values())
            .map(|(a, b)| a * b)
            .collect();
        Ok(Tensor::from_op(
            self.shape(),
            v,
            vec![self.clone(), rhs.clone()],
            Box::new(|og, _, ps| {
                let (a, b) = (&ps[0].1, &ps[1].1);
                vec![
                    og.iter().zip(b).map(|(g, bv)| g * bv).collect(),
                    og.iter().zip(a).map(|(g, av)| g * av).collect(),
                ]
            }),
        ))
    }

    pub fn div(&self, rhs: &Tensor) -> Result<Tensor> {
        same_shape("div", self, rhs)?;
        let v: Vec<f64> = self
            .values()
            .iter()
            .zip(rhs.values())
            .map(|(a, b)| a / b)
            .collect();
        super::check_finite(&v, "div")?;
        Ok(Tensor::from_op(
            self.shape(),
            v,
            vec![self.clone(), rhs.clone()],
            Box::new(|og, _, ps| {
                let (a, b) = (&ps[0].1, &ps[1].1);
                let da = og.iter().zip(b).map(|(g, bv)| g / bv).collect();
                let db = og
                    .iter()
                    .zip(a.iter().zip(b))
                    .map(|(g, (av, bv))| -g * av / (bv * bv))
                    .collect();
                vec![da, db]
            }),
        ))
    }

    // ── elementwise unary / scalar ───────────────────────────────────

    pub fn neg(&self) -> Tensor {
        self.unary(|x| -x, |_, _| -1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary(move |x| x + c, |_, _| 1.0)
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        self.unary(move |x| x * c, move |_, _| c)
    }

    pub fn relu(&self) -> Tensor {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        self.unary(
            move |x| if x > 0.0 { x } else { slope * x },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }

    pub fn elu(&self) -> Tensor {
        self.unary(
            |x| if x > 0.0 { x } else { x.exp() - 1.0 },
            |x, y| if x > 0.0 { 1.0 } else { y + 1.0 },
        )
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(|x| 1.0 / (1.0 + (-x).exp()), |_, y| y * (1.0 - y))
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(|x| x.tanh(), |_, y| 1.0 - y * y)
    }

    pub fn exp(&self) -> Tensor {
        self.unary(|x| x.exp(), |_, y| y)
    }

    pub fn ln(&self) -> Tensor {
        self.unary(|x| x.ln(), |x, _| 1.0 / x)
    }

    pub fn square(&self) -> Tensor {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    fn unary<F, G>(&self, f: F, df: G) -> Tensor
    where
        F: Fn(f64) -> f64,
        G: Fn(f64, f64) -> f64 + 'static,
    {
        let v: Vec<f64> = self.values().iter().map(|&x| f(x)).collect();
        Tensor::from_op(
            self.shape(),
            v,
            vec![self.clone()],
            Box::new(move |og, ov, ps| {
                let x = &ps[0].1;
                vec![og
                    .iter()
                    .zip(x.iter().zip(ov))
                    .map(|(g, (&xi, &yi))| g * df(xi, yi))
                    .collect()]
            }),
        )
    }

    // ── linear algebra ───────────────────────────────────────────────

    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, k) = dims2("matmul", self)?;
        let (k2, n) = dims2("matmul", rhs)?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        let a = self.values();
        let b = rhs.values();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = a[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone(), rhs.clone()],
            Box::new(move |og, _, ps| {
                let a = &ps[0].1;
                let b = &ps[1].1;
                // dA = G · Bᵀ
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += og[i * n + j] * b[p * n + j];
                        }
                        da[i * k + p] = s;
                    }
                }
                // dB = Aᵀ · G
                let mut db = vec![0.0; k * n];
                for p in 0..k {
                    for i in 0..m {
                        let av = a[i * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db[p * n + j] += av * og[i * n + j];
                        }
                    }
                }
                vec![da, db]
            }),
        ))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = dims2("transpose", self)?;
        let a = self.values();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = a[i * n + j];
            }
        }
        Ok(Tensor::from_op(
            vec![n, m],
            out,
            vec![self.clone()],
            Box::new(move |og, _, _| {
                let mut dg = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        dg[i * n + j] = og[j * m + i];
                    }
                }
                vec![dg]
            }),
        ))
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::invalid(format!(
                "reshape: {:?} incompatible with {} elements",
                shape,
                self.numel()
            )));
        }
        Ok(Tensor::from_op(
            shape,
            self.values(),
            vec![self.clone()],
            Box::new(|og, _, _| vec![og.to_vec()]),
        ))
    }

    // ── softmax / reductions ─────────────────────────────────────────

    /// Softmax along `axis` of a 1-D or 2-D tensor, with max-subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let s = self.shape();
        let (rows, cols, by_row) = match (s.len(), axis) {
            (1, 0) => (1, s[0], true),
            (2, 1) => (s[0], s[1], true),
            (2, 0) => (s[1], s[0], false),
            _ => return Err(Error::invalid(format!("softmax: axis {axis} for shape {s:?}"))),
        };
        let x = self.values();
        let n = x.len();
        let at = move |slice: usize, k: usize| {
            if by_row {
                slice * cols + k
            } else {
                k * rows + slice
            }
        };
        let mut out = vec![0.0; n];
        for r in 0..rows {
            let mx = (0..cols).map(|k| x[at(r, k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for k in 0..cols {
                let e = (x[at(r, k)] - mx).exp();
                out[at(r, k)] = e;
                z += e;
            }
            for k in 0..cols {
                out[at(r, k)] /= z;
            }
        }
        Ok(Tensor::from_op(
            s,
            out,
            vec![self.clone()],
            Box::new(move |og, ov, _| {
                let mut dx = vec![0.0; og.len()];
                for r in 0..rows {
                    let mut dot = 0.0;
                    for k in 0..cols {
                        dot += og[at(r, k)] * ov[at(r, k)];
                    }
                    for k in 0..cols {
                        dx[at(r, k)] = ov[at(r, k)] * (og[at(r, k)] - dot);
                    }
                }
                vec![dx]
            }),
        ))
    }

    pub fn sum(&self) -> Tensor {
        let s: f64 = self.values().iter().sum();
        let n = self.numel();
        Tensor::from_op(
            vec![1],
            vec![s],
            vec![self.clone()],
            Box::new(move |og, _, _| vec![vec![og[0]; n]]),
        )
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        let s: f64 = self.values().iter().sum();
        Tensor::from_op(
            vec![1],
            vec![s / n as f64],
            vec![self.clone()],
            Box::new(move |og, _, _| vec![vec![og[0] / n as f64; n]]),
        )
    }

    /// Mean along one axis of a 2-D tensor, keeping the reduced dim as 1.
    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        let (m, n) = dims2("mean_axis", self)?;
        let x = self.values();
        match axis {
            1 => {
                let out: Vec<f64> = (0..m)
                    .map(|i| x[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64)
                    .collect();
                Ok(Tensor::from_op(
                    vec![m, 1],
                    out,
                    vec![self.clone()],
                    Box::new(move |og, _, _| {
                        let mut dx = vec![0.0; m * n];
                        for i in 0..m {
                            for j in 0..n {
                                dx[i * n + j] = og[i] / n as f64;
                            }
                        }
                        vec![dx]
                    }),
                ))
            }
            0 => {
                let out: Vec<f64> = (0..n)
                    .map(|j| (0..m).map(|i| x[i * n + j]).sum::<f64>() / m as f64)
                    .collect();
                Ok(Tensor::from_op(
                    vec![1, n],
                    out,
                    vec![self.clone()],
                    Box::new(move |og, _, _| {
                        let mut dx = vec![0.0; m * n];
                        for i in 0..m {
                            for j in 0..n {
                                dx[i * n + j] = og[j] / m as f64;
                            }
                        }
                        vec![dx]
                    }),
                ))
            }
            _ => Err(Error::invalid("mean_axis: axis must be 0 or 1")),
        }
    }

    // ── shape surgery ────────────────────────────────────────────────

    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::invalid("concat: empty input"));
        }
        let shapes: Vec<(usize, usize)> = parts
            .iter()
            .map(|p| dims2("concat", p))
            .collect::<Result<_>>()?;
        match axis {
            0 => {
                let n = shapes[0].1;
                if shapes.iter().any(|&(_, c)| c != n) {
                    return Err(Error::invalid("concat axis 0: column mismatch"));
                }
                let m: usize = shapes.iter().map(|&(r, _)| r).sum();
                let mut v = Vec::with_capacity(m * n);
                for p in parts {
                    v.extend(p.values());
                }
                let row_counts: Vec<usize> = shapes.iter().map(|&(r, _)| r).collect();
                Ok(Tensor::from_op(
                    vec![m, n],
                    v,
                    parts.to_vec(),
                    Box::new(move |og, _, _| {
                        let mut out = Vec::new();
                        let mut off = 0;
                        for &r in &row_counts {
                            out.push(og[off..off + r * n].to_vec());
                            off += r * n;
                        }
                        out
                    }),
                ))
            }
            1 => {
                let m = shapes[0].0;
                if shapes.iter().any(|&(r, _)| r != m) {
                    return Err(Error::invalid("concat axis 1: row mismatch"));
                }
                let n: usize = shapes.iter().map(|&(_, c)| c).sum();
                let mut v = vec![0.0; m * n];
                let mut off = 0;
                for (p, &(_, c)) in parts.iter().zip(&shapes) {
                    let pv = p.values();
                    for i in 0..m {
                        v[i * n + off..i * n + off + c].copy_from_slice(&pv[i * c..(i + 1) * c]);
                    }
                    off += c;
                }
                let col_counts: Vec<usize> = shapes.iter().map(|&(_, c)| c).collect();
                Ok(Tensor::from_op(
                    vec![m, n],
                    v,
                    parts.to_vec(),
                    Box::new(move |og, _, _| {
                        let mut out = Vec::new();
                        let mut off = 0;
                        for &c in &col_counts {
                            let mut g = vec![0.0; m * c];
                            for i in 0..m {
                                g[i * c..(i + 1) * c]
                                    .copy_from_slice(&og[i * n + off..i * n + off + c]);
                            }
                            out.push(g);
                            off += c;
                        }
                        out
                    }),
                ))
            }
            _ => Err(Error::invalid("concat: axis must be 0 or 1")),
        }
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Tensor> {
        let (m, n) = dims2("slice_rows", self)?;
        if start >= end || end > m {
            return Err(Error::invalid(format!("slice_rows {start}..{end} of {m} rows")));
        }
        let v = self.values()[start * n..end * n].to_vec();
        Ok(Tensor::from_op(
            vec![end - start, n],
            v,
            vec![self.clone()],
            Box::new(move |og, _, _| {
                let mut dx = vec![0.0; m * n];
                dx[start * n..end * n].copy_from_slice(og);
                vec![dx]
            }),
        ))
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Tensor> {
        let (m, n) = dims2("slice_cols", self)?;
        if start >= end || end > n {
            return Err(Error::invalid(format!("slice_cols {start}..{end} of {n} cols")));
        }
        let w = end - start;
        let x = self.values();
        let mut v = vec![0.0; m * w];
        for i in 0..m {
            v[i * w..(i + 1) * w].copy_from_slice(&x[i * n + start..i * n + end]);
        }
        Ok(Tensor::from_op(
            vec![m, w],
            v,
            vec![self.clone()],
            Box::new(move |og, _, _| {
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    dx[i * n + start..i * n + end].copy_from_slice(&og[i * w..(i + 1) * w]);
                }
                vec![dx]
            }),
        ))
    }

    // ── broadcast ops ────────────────────────────────────────────────

    /// N×F + 1×F row bias.
    pub fn add_row_broadcast(&self, bias: &Tensor) -> Result<Tensor> {
        let (m, n) = dims2("add_row_broadcast", self)?;
        let (bm, bn) = dims2("add_row_broadcast", bias)?;
        if bm != 1 || bn != n {
            return Err(Error::ShapeMismatch {
                op: "add_row_broadcast",
                lhs: self.shape(),
                rhs: bias.shape(),
            });
        }
        let x = self.values();
        let b = bias.values();
        let v: Vec<f64> = (0..m * n).map(|i| x[i] + b[i % n]).collect();
        Ok(Tensor::from_op(
            vec![m, n],
            v,
            vec![self.clone(), bias.clone()],
            Box::new(move |og, _, _| {
                let mut db = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        db[j] += og[i * n + j];
                    }
                }
                vec![og.to_vec(), db]
            }),
        ))
    }

    /// C×T ⊙ (C×1 broadcast over columns).
    pub fn mul_col_broadcast(&self, v: &Tensor) -> Result<Tensor> {
        self.col_broadcast("mul_col_broadcast", v, false)
    }

    /// C×T ÷ (C×1 broadcast over columns).
    pub fn div_col_broadcast(&self, v: &Tensor) -> Result<Tensor> {
        self.col_broadcast("div_col_broadcast", v, true)
    }

    fn col_broadcast(&self, op: &'static str, vcol: &Tensor, divide: bool) -> Result<Tensor> {
        let (m, n) = dims2(op, self)?;
        let (vm, vn) = dims2(op, vcol)?;
        if vm != m || vn != 1 {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape(),
                rhs: vcol.shape(),
            });
        }
        let x = self.values();
        let v = vcol.values();
        let out: Vec<f64> = (0..m * n)
            .map(|i| {
                let c = v[i / n];
                if divide {
                    x[i] / c
                } else {
                    x[i] * c
                }
            })
            .collect();
        super::check_finite(&out, op)?;
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone(), vcol.clone()],
            Box::new(move |og, _, ps| {
                let x = &ps[0].1;
                let v = &ps[1].1;
                let mut dx = vec![0.0; m * n];
                let mut dv = vec![0.0; m];
                for i in 0..m {
                    for j in 0..n {
                        let g = og[i * n + j];
                        if divide {
                            dx[i * n + j] = g / v[i];
                            dv[i] += -g * x[i * n + j] / (v[i] * v[i]);
                        } else {
                            dx[i * n + j] = g * v[i];
                            dv[i] += g * x[i * n + j];
                        }
                    }
                }
                vec![dx, dv]
            }),
        ))
    }

    // ── convolutions ─────────────────────────────────────────────────

    /// Per-channel 1-D convolution (correlation form) with "same" zero padding.
    pub fn depthwise_conv1d(&self, kernel: &Tensor) -> Result<Tensor> {
        self.dilated_depthwise_conv1d(kernel, 1, ConvPadding::Same)
    }

    pub fn dilated_depthwise_conv1d(
        &self,
        kernel: &Tensor,
        dilation: usize,
        padding: ConvPadding,
    ) -> Result<Tensor> {
        let (c, t) = dims2("dilated_depthwise_conv1d", self)?;
        let (kc, k) = dims2("dilated_depthwise_conv1d", kernel)?;
        if kc != c {
            return Err(Error::ShapeMismatch {
                op: "dilated_depthwise_conv1d",
                lhs: self.shape(),
                rhs: kernel.shape(),
            });
        }
        if dilation < 1 {
            return Err(Error::invalid("dilation must be >= 1"));
        }
        if padding == ConvPadding::Same && k % 2 == 0 {
            return Err(Error::invalid(format!(
                "same-padded depthwise conv requires odd kernel size, got {k}"
            )));
        }
        let x = self.values();
        let kv = kernel.values();
        let d = dilation as isize;
        // Same: y[c,i] = sum_j K[c,j] x[c, i + d*(j - (k-1)/2)]
        // Causal: y[c,i] = sum_j K[c,j] x[c, i - d*j]
        let src = move |i: isize, j: isize, k: usize, causal: bool| -> isize {
            if causal {
                i - d * j
            } else {
                i + d * (j - (k as isize - 1) / 2)
            }
        };
        let causal = padding == ConvPadding::Causal;
        let mut out = vec![0.0; c * t];
        for ch in 0..c {
            for i in 0..t as isize {
                let mut s = 0.0;
                for j in 0..k as isize {
                    let p = src(i, j, k, causal);
                    if p >= 0 && p < t as isize {
                        s += kv[ch * k + j as usize] * x[ch * t + p as usize];
                    }
                }
                out[ch * t + i as usize] = s;
            }
        }
        Ok(Tensor::from_op(
            vec![c, t],
            out,
            vec![self.clone(), kernel.clone()],
            Box::new(move |og, _, ps| {
                let x = &ps[0].1;
                let kv = &ps[1].1;
                let mut dx = vec![0.0; c * t];
                let mut dk = vec![0.0; c * k];
                for ch in 0..c {
                    for i in 0..t as isize {
                        let g = og[ch * t + i as usize];
                        if g == 0.0 {
                            continue;
                        }
                        for j in 0..k as isize {
                            let p = src(i, j, k, causal);
                            if p >= 0 && p < t as isize {
                                dx[ch * t + p as usize] += g * kv[ch * k + j as usize];
                                dk[ch * k + j as usize] += g * x[ch * t + p as usize];
                            }
                        }
                    }
                }
                vec![dx, dk]
            }),
        ))
    }

    /// Cross-channel 1×1 convolution: x C×T, kernel C×C' → C'×T.
    pub fn pointwise_conv(&self, kernel: &Tensor) -> Result<Tensor> {
        let (c, t) = dims2("pointwise_conv", self)?;
        let (kc, cp) = dims2("pointwise_conv", kernel)?;
        if kc != c {
            return Err(Error::ShapeMismatch {
                op: "pointwise_conv",
                lhs: self.shape(),
                rhs: kernel.shape(),
            });
        }
        let x = self.values();
        let kv = kernel.values();
        let mut out = vec![0.0; cp * t];
        for co in 0..cp {
            for i in 0..t {
                let mut s = 0.0;
                for ci in 0..c {
                    s += x[ci * t + i] * kv[ci * cp + co];
                }
                out[co * t + i] = s;
            }
        }
        Ok(Tensor::from_op(
            vec![cp, t],
            out,
            vec![self.clone(), kernel.clone()],
            Box::new(move |og, _, ps| {
                let x = &ps[0].1;
                let kv = &ps[1].1;
                let mut dx = vec![0.0; c * t];
                let mut dk = vec![0.0; c * cp];
                for co in 0..cp {
                    for i in 0..t {
                        let g = og[co * t + i];
                        if g == 0.0 {
                            continue;
                        }
                        for ci in 0..c {
                            dx[ci * t + i] += g * kv[ci * cp + co];
                            dk[ci * cp + co] += g * x[ci * t + i];
                        }
                    }
                }
                vec![dx, dk]
            }),
        ))
    }
}
