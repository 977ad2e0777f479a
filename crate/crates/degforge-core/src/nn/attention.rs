//! Multi-head self-attention and the pre-LN transformer block.

use super::{Gelu, Init, LayerNorm, Linear, Param};
use ndarray::{s, Array2, Array3, Array4};

/// Multi-head self-attention on (B, N, D) token activations.
pub struct Mhsa {
    qkv: Linear, // D -> 3D
    out: Linear, // D -> D
    heads: usize,
    cache: Option<AttnCache>,
}

struct AttnCache {
    q: Array4<f32>,     // (B, H, N, dh)
    k: Array4<f32>,
    v: Array4<f32>,
    probs: Array4<f32>, // (B, H, N, N)
}

impl Mhsa {
    pub fn new(init: &mut Init, dim: usize, heads: usize) -> Self {
        assert_eq!(dim % heads, 0);
        Mhsa {
            qkv: Linear::new(init, dim, 3 * dim, 0.02),
            out: Linear::new(init, dim, dim, 0.02),
            heads,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array3<f32>, train: bool) -> Array3<f32> {
        let (b, n, d) = x.dim();
        let h = self.heads;
        let dh = d / h;
        let flat = x
            .view()
            .into_shape_with_order((b * n, d))
            .unwrap()
            .to_owned();
        let qkv = self.qkv.forward(&flat, train); // (B*N, 3D)

        let mut q = Array4::zeros((b, h, n, dh));
        let mut k = Array4::zeros((b, h, n, dh));
        let mut v = Array4::zeros((b, h, n, dh));
        for bi in 0..b {
            for ni in 0..n {
                let row = qkv.row(bi * n + ni);
                for hi in 0..h {
                    for di in 0..dh {
                        q[[bi, hi, ni, di]] = row[hi * dh + di];
                        k[[bi, hi, ni, di]] = row[d + hi * dh + di];
                        v[[bi, hi, ni, di]] = row[2 * d + hi * dh + di];
                    }
                }
            }
        }

        let scale = 1.0 / (dh as f32).sqrt();
        let mut probs = Array4::zeros((b, h, n, n));
        let mut ctx = Array2::<f32>::zeros((b * n, d));
        for bi in 0..b {
            for hi in 0..h {
                let qm = q.slice(s![bi, hi, .., ..]);
                let km = k.slice(s![bi, hi, .., ..]);
                let vm = v.slice(s![bi, hi, .., ..]);
                let mut scores = qm.dot(&km.t());
                scores.mapv_inplace(|x| x * scale);
                for mut row in scores.rows_mut() {
                    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                    let mut sum = 0.0;
                    for x in row.iter_mut() {
                        *x = (*x - max).exp();
                        sum += *x;
                    }
                    for x in row.iter_mut() {
                        *x /= sum;
                    }
                }
                let c = scores.dot(&vm); // (N, dh)
                probs.slice_mut(s![bi, hi, .., ..]).assign(&scores);
                for ni in 0..n {
                    for di in 0..dh {
                        ctx[[bi * n + ni, hi * dh + di]] = c[[ni, di]];
                    }
                }
            }
        }

        if train {
            self.cache = Some(AttnCache { q, k, v, probs });
        }
        let y = self.out.forward(&ctx, train); // (B*N, D)
        y.into_shape_with_order((b, n, d)).unwrap()
    }

    pub fn backward(&mut self, gy: &Array3<f32>) -> Array3<f32> {
        let (b, n, d) = gy.dim();
        let h = self.heads;
        let dh = d / h;
        let cache = self.cache.take().expect("backward without forward");
        let scale = 1.0 / (dh as f32).sqrt();

        let gy_flat = gy
            .view()
            .into_shape_with_order((b * n, d))
            .unwrap()
            .to_owned();
        let gctx = self.out.backward(&gy_flat); // (B*N, D)

        let mut gqkv = Array2::<f32>::zeros((b * n, 3 * d));
        for bi in 0..b {
            for hi in 0..h {
                let qm = cache.q.slice(s![bi, hi, .., ..]);
                let km = cache.k.slice(s![bi, hi, .., ..]);
                let vm = cache.v.slice(s![bi, hi, .., ..]);
                let pm = cache.probs.slice(s![bi, hi, .., ..]);

                // gradient of the context rows for this head
                let mut gc = Array2::<f32>::zeros((n, dh));
                for ni in 0..n {
                    for di in 0..dh {
                        gc[[ni, di]] = gctx[[bi * n + ni, hi * dh + di]];
                    }
                }

                let gv = pm.t().dot(&gc); // (N, dh)
                let gp = gc.dot(&vm.t()); // (N, N)

                // softmax backward per row
                let mut gs = Array2::<f32>::zeros((n, n));
                for ni in 0..n {
                    let dot: f32 = (0..n).map(|j| gp[[ni, j]] * pm[[ni, j]]).sum();
                    for j in 0..n {
                        gs[[ni, j]] = (gp[[ni, j]] - dot) * pm[[ni, j]] * scale;
                    }
                }

                let gq = gs.dot(&km); // (N, dh)
                let gk = gs.t().dot(&qm); // (N, dh)

                for ni in 0..n {
                    for di in 0..dh {
                        gqkv[[bi * n + ni, hi * dh + di]] = gq[[ni, di]];
                        gqkv[[bi * n + ni, d + hi * dh + di]] = gk[[ni, di]];
                        gqkv[[bi * n + ni, 2 * d + hi * dh + di]] = gv[[ni, di]];
                    }
                }
            }
        }

        let gx = self.qkv.backward(&gqkv); // (B*N, D)
        gx.into_shape_with_order((b, n, d)).unwrap()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.qkv.params_mut();
        p.extend(self.out.params_mut());
        p
    }
}

/// Pre-LN transformer block: x + attn(ln1(x)), then h + mlp(ln2(h)).
pub struct TransformerBlock {
    ln1: LayerNorm,
    attn: Mhsa,
    ln2: LayerNorm,
    fc1: Linear,
    act: Gelu,
    fc2: Linear,
    dim: usize,
}

impl TransformerBlock {
    pub fn new(init: &mut Init, dim: usize, heads: usize, mlp_ratio: usize) -> Self {
        TransformerBlock {
            ln1: LayerNorm::new(dim),
            attn: Mhsa::new(init, dim, heads),
            ln2: LayerNorm::new(dim),
            fc1: Linear::new(init, dim, dim * mlp_ratio, 0.02),
            act: Gelu::default(),
            fc2: Linear::new(init, dim * mlp_ratio, dim, 0.02),
            dim,
        }
    }

    pub fn forward(&mut self, x: &Array3<f32>, train: bool) -> Array3<f32> {
        let (b, n, d) = x.dim();
        assert_eq!(d, self.dim);
        let flat = |a: &Array3<f32>| {
            a.view()
                .into_shape_with_order((b * n, d))
                .unwrap()
                .to_owned()
        };
        let unflat = |a: Array2<f32>| a.into_shape_with_order((b, n, d)).unwrap();

        let h1 = self.ln1.forward(&flat(x), train);
        let attn_out = self.attn.forward(&unflat(h1), train);
        let res1 = x + &attn_out;

        let h2 = self.ln2.forward(&flat(&res1), train);
        let m = self.fc1.forward(&h2, train);
        let m = self.act.forward(&m, train);
        let m = self.fc2.forward(&m, train);
        &res1 + &unflat(m)
    }

    pub fn backward(&mut self, gy: &Array3<f32>) -> Array3<f32> {
        let (b, n, d) = gy.dim();
        let flat = |a: &Array3<f32>| {
            a.view()
                .into_shape_with_order((b * n, d))
                .unwrap()
                .to_owned()
        };
        let unflat = |a: Array2<f32>| a.into_shape_with_order((b, n, d)).unwrap();

        // y = res1 + mlp(ln2(res1))
        let gm = self.fc2.backward(&flat(gy));
        let gm = self.act.backward(&gm);
        let gm = self.fc1.backward(&gm);
        let gres1_mlp = self.ln2.backward(&gm);
        let gres1 = gy + &unflat(gres1_mlp);

        // res1 = x + attn(ln1(x))
        let gattn = self.attn.backward(&gres1);
        let gx_ln = self.ln1.backward(&flat(&gattn));
        &gres1 + &unflat(gx_ln)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.ln1.params_mut();
        p.extend(self.attn.params_mut());
        p.extend(self.ln2.params_mut());
        p.extend(self.fc1.params_mut());
        p.extend(self.fc2.params_mut());
        p
    }

    pub fn tensor_snapshot(&self, prefix: &str, out: &mut Vec<(String, ndarray::ArrayD<f32>)>) {
        self.ln1.tensor_snapshot(&format!("{prefix}.ln1"), out);
        self.attn.qkv.tensor_snapshot(&format!("{prefix}.qkv"), out);
        self.attn.out.tensor_snapshot(&format!("{prefix}.proj"), out);
        self.ln2.tensor_snapshot(&format!("{prefix}.ln2"), out);
        self.fc1.tensor_snapshot(&format!("{prefix}.fc1"), out);
        self.fc2.tensor_snapshot(&format!("{prefix}.fc2"), out);
    }

    pub fn load_tensors(
        &mut self,
        prefix: &str,
        map: &mut std::collections::HashMap<String, ndarray::ArrayD<f32>>,
    ) -> crate::Result<()> {
        self.ln1.load_tensors(&format!("{prefix}.ln1"), map)?;
        self.attn.qkv.load_tensors(&format!("{prefix}.qkv"), map)?;
        self.attn.out.load_tensors(&format!("{prefix}.proj"), map)?;
        self.ln2.load_tensors(&format!("{prefix}.ln2"), map)?;
        self.fc1.load_tensors(&format!("{prefix}.fc1"), map)?;
        self.fc2.load_tensors(&format!("{prefix}.fc2"), map)?;
        Ok(())
    }
}
