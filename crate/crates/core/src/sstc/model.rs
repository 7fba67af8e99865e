use crate::error::{Error, Result};
use crate::hsi::{extract_patch, HsiCube};
use crate::rng::Stream;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

use super::SstcConfig;

#[derive(Debug, Clone)]
struct Branch {
    conv_w: ParamId,
    conv_b: ParamId,
    proj_w: ParamId,
    proj_b: ParamId,
}

#[derive(Debug, Clone)]
struct Layer {
    ln1: (ParamId, ParamId),
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2: (ParamId, ParamId),
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
struct Ids {
    branches: Vec<Branch>,
    pos: Option<ParamId>,
    layers: Vec<Layer>,
    ln_f: Option<(ParamId, ParamId)>,
    head_w: ParamId,
    head_b: ParamId,
}

/// Vars produced by one classification pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Multi-branch features as tokens, `[B, L, d]`.
    pub tokens: Var,
    pub logits: Var,
    pub probs: Var,
    /// Per layer, attention weights `[B * heads, queries, L]`.
    pub attention: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct SstcModel {
    config: SstcConfig,
    params: ParamStore,
    ids: Ids,
}

/// Uniform in `+-1/sqrt(fan_in)`.
fn uniform_init(seed: u64, tag: &str, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let mut s = Stream::new(seed, &format!("init/{tag}"), 0);
    Tensor::from_fn(shape, |_| s.uniform_in(-bound, bound))
}

impl SstcModel {
    /// Builds a freshly initialised model. Initial values depend only on
    /// `config.seed` and each parameter's tag.
    pub fn new(config: SstcConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        let mut p = ParamStore::new();
        let lin = |p: &mut ParamStore, tag: String, shape: &[usize], fan_in: usize| {
            let t = uniform_init(seed, &tag, shape, fan_in);
            p.add(tag, t)
        };
        let (c, bc, d, l) = (
            config.bands,
            config.branch_channels,
            config.model_dim(),
            config.tokens(),
        );
        let mut branches = Vec::new();
        for (m, (&k, &dm)) in config
            .kernel_sizes
            .iter()
            .zip(&config.projected_dims)
            .enumerate()
        {
            let fan = c * k * k;
            branches.push(Branch {
                conv_w: lin(&mut p, format!("mrf{m}.conv.weight"), &[bc, c, k, k], fan),
                conv_b: lin(&mut p, format!("mrf{m}.conv.bias"), &[bc], fan),
                proj_w: lin(&mut p, format!("mrf{m}.proj.weight"), &[bc, dm], bc),
                proj_b: lin(&mut p, format!("mrf{m}.proj.bias"), &[dm], bc),
            });
        }
        let pos = config.positional.then(|| {
            let mut s = Stream::new(seed, "init/pos", 0);
            p.add("pos", Tensor::from_fn(&[l, d], |_| 0.02 * s.normal()))
        });
        let ln = |p: &mut ParamStore, name: String| {
            (
                p.add(format!("{name}.gamma"), Tensor::full(&[d], 1.0)),
                p.add(format!("{name}.beta"), Tensor::zeros(&[d])),
            )
        };
        let hidden = d * config.ffn_ratio;
        let mut layers = Vec::new();
        for i in 0..config.layers {
            let pre = format!("enc{i}");
            layers.push(Layer {
                ln1: ln(&mut p, format!("{pre}.ln1")),
                wq: lin(&mut p, format!("{pre}.attn.wq"), &[d, d], d),
                wk: lin(&mut p, format!("{pre}.attn.wk"), &[d, d], d),
                wv: lin(&mut p, format!("{pre}.attn.wv"), &[d, d], d),
                wo: lin(&mut p, format!("{pre}.attn.wo"), &[d, d], d),
                bo: lin(&mut p, format!("{pre}.attn.bo"), &[d], d),
                ln2: ln(&mut p, format!("{pre}.ln2")),
                w1: lin(&mut p, format!("{pre}.ffn.w1"), &[d, hidden], d),
                b1: lin(&mut p, format!("{pre}.ffn.b1"), &[hidden], d),
                w2: lin(&mut p, format!("{pre}.ffn.w2"), &[hidden, d], hidden),
                b2: lin(&mut p, format!("{pre}.ffn.b2"), &[d], hidden),
            });
        }
        let ln_f = config.final_norm.then(|| ln(&mut p, "ln_f".into()));
        let k = config.classes;
        let head_w = lin(&mut p, "head.weight".into(), &[d, k], d);
        let head_b = lin(&mut p, "head.bias".into(), &[k], d);
        Ok(Self {
            ids: Ids {
                branches,
                pos,
                layers,
                ln_f,
                head_w,
                head_b,
            },
            config,
            params: p,
        })
    }

    pub fn config(&self) -> &SstcConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn check_patches(&self, shape: &[usize]) -> Result<()> {
        let c = &self.config;
        if shape.len() != 4
            || shape[1] != c.bands
            || shape[2] != c.patch_size
            || shape[3] != c.patch_size
        {
            return Err(Error::Shape(format!(
                "patches {shape:?} do not match [B, {}, {w}, {w}]",
                c.bands,
                w = c.patch_size
            )));
        }
        Ok(())
    }

    /// Multi-branch features as `[B, L, d]` tokens, pixel-major.
    pub fn mrf_tokens(&self, tape: &mut Tape, patches: Var) -> Result<Var> {
        self.check_patches(tape.value(patches).shape())?;
        let p = &self.params;
        let mut parts = Vec::with_capacity(self.ids.branches.len());
        for br in &self.ids.branches {
            let (kw, kb) = (tape.param(p, br.conv_w), tape.param(p, br.conv_b));
            let conv = tape.conv2d(patches, kw, kb)?;
            let tok = tape.to_tokens(conv)?;
            let (pw, pb) = (tape.param(p, br.proj_w), tape.param(p, br.proj_b));
            let proj = tape.matmul(tok, pw)?;
            let proj = tape.add_bias(proj, pb)?;
            parts.push(tape.relu(proj));
        }
        tape.concat_last(&parts)
    }

    /// Multi-branch feature maps `[B, d, w, w]`.
    pub fn mrf_features(&self, patches: &Tensor) -> Result<Tensor> {
        let tokens = self.mrf_tokens_value(patches)?;
        let (b, l, d) = (tokens.shape()[0], tokens.shape()[1], tokens.shape()[2]);
        let w = self.config.patch_size;
        let src = tokens.data();
        let mut out = vec![0.0; src.len()];
        for bi in 0..b {
            for t in 0..l {
                for c in 0..d {
                    out[(bi * d + c) * l + t] = src[(bi * l + t) * d + c];
                }
            }
        }
        Tensor::new(vec![b, d, w, w], out)
    }

    pub fn mrf_tokens_value(&self, patches: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.input(patches.clone());
        let t = self.mrf_tokens(&mut tape, x)?;
        Ok(tape.value(t).clone())
    }

    /// Runs the encoder on `[B, L, d]` tokens. With `query = Some(i)` the
    /// last layer only produces token `i` (shape `[B, 1, d]`); everything it
    /// depends on is computed exactly as in the full pass.
    pub fn encode(
        &self,
        tape: &mut Tape,
        tokens: Var,
        query: Option<usize>,
    ) -> Result<(Var, Vec<Var>)> {
        let c = &self.config;
        let (d, l) = (c.model_dim(), c.tokens());
        let shape = tape.value(tokens).shape().to_vec();
        if shape.len() != 3 || shape[1] != l || shape[2] != d {
            return Err(Error::Shape(format!("tokens {shape:?} for L={l}, d={d}")));
        }
        let b = shape[0];
        let p = &self.params;
        let mut x = tokens;
        if let Some(pos) = self.ids.pos {
            let pv = tape.param(p, pos);
            x = tape.add_positional(x, pv)?;
        }
        let heads = c.heads;
        let scale = 1.0 / ((d / heads) as f64).sqrt();
        let mut attention = Vec::with_capacity(self.ids.layers.len());
        let last = self.ids.layers.len() - 1;
        for (i, ly) in self.ids.layers.iter().enumerate() {
            let (g1, b1) = (tape.param(p, ly.ln1.0), tape.param(p, ly.ln1.1));
            let h = tape.layer_norm(x, g1, b1)?;
            let (hq, xr) = match query.filter(|_| i == last) {
                Some(q) => {
                    let hq = tape.select_token(h, q)?;
                    let xr = tape.select_token(x, q)?;
                    (tape.reshape(hq, &[b, 1, d])?, tape.reshape(xr, &[b, 1, d])?)
                }
                None => (h, x),
            };
            let (wq, wk, wv) = (
                tape.param(p, ly.wq),
                tape.param(p, ly.wk),
                tape.param(p, ly.wv),
            );
            let q = tape.matmul(hq, wq)?;
            let k = tape.matmul(h, wk)?;
            let v = tape.matmul(h, wv)?;
            let (q, k, v) = (
                tape.split_heads(q, heads)?,
                tape.split_heads(k, heads)?,
                tape.split_heads(v, heads)?,
            );
            let scores = tape.batch_matmul(q, k, true)?;
            let scores = tape.scale(scores, scale);
            let a = tape.softmax(scores);
            attention.push(a);
            let o = tape.batch_matmul(a, v, false)?;
            let o = tape.merge_heads(o, heads)?;
            let (wo, bo) = (tape.param(p, ly.wo), tape.param(p, ly.bo));
            let o = tape.matmul(o, wo)?;
            let o = tape.add_bias(o, bo)?;
            let x1 = tape.add(xr, o)?;

            let (g2, b2) = (tape.param(p, ly.ln2.0), tape.param(p, ly.ln2.1));
            let h2 = tape.layer_norm(x1, g2, b2)?;
            let (w1, bb1) = (tape.param(p, ly.w1), tape.param(p, ly.b1));
            let f = tape.matmul(h2, w1)?;
            let f = tape.add_bias(f, bb1)?;
            let f = tape.relu(f);
            let (w2, bb2) = (tape.param(p, ly.w2), tape.param(p, ly.b2));
            let f = tape.matmul(f, w2)?;
            let f = tape.add_bias(f, bb2)?;
            x = tape.add(x1, f)?;
        }
        Ok((x, attention))
    }

    /// Encoder output for every token, `[B, L, d]`.
    pub fn encode_value(&self, tokens: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let t = tape.input(tokens.clone());
        let (out, _) = self.encode(&mut tape, t, None)?;
        Ok(tape.value(out).clone())
    }

    /// Encoder plus head on precomputed `[B, L, d]` tokens.
    pub fn forward_tokens(&self, tape: &mut Tape, tokens: Var) -> Result<Forward> {
        let center = self.config.center_token();
        let (enc, attention) = self.encode(tape, tokens, Some(center))?;
        let b = tape.value(enc).shape()[0];
        let d = self.config.model_dim();
        let mut z = tape.reshape(enc, &[b, d])?;
        let p = &self.params;
        if let Some((g, be)) = self.ids.ln_f {
            let (g, be) = (tape.param(p, g), tape.param(p, be));
            z = tape.layer_norm(z, g, be)?;
        }
        let (w, hb) = (
            tape.param(p, self.ids.head_w),
            tape.param(p, self.ids.head_b),
        );
        let logits = tape.matmul(z, w)?;
        let logits = tape.add_bias(logits, hb)?;
        let probs = tape.softmax(logits);
        Ok(Forward {
            tokens,
            logits,
            probs,
            attention,
        })
    }

    /// Full pass from `[B, C, w, w]` patches.
    pub fn forward(&self, tape: &mut Tape, patches: &Tensor) -> Result<Forward> {
        let x = tape.input(patches.clone());
        let tokens = self.mrf_tokens(tape, x)?;
        self.forward_tokens(tape, tokens)
    }

    /// Class probabilities `[B, K]`.
    pub fn classify(&self, patches: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, patches)?;
        Ok(tape.value(f.probs).clone())
    }

    /// Class probabilities from precomputed tokens.
    pub fn classify_tokens(&self, tokens: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let t = tape.input(tokens.clone());
        let f = self.forward_tokens(&mut tape, t)?;
        Ok(tape.value(f.probs).clone())
    }

    /// Probabilities for the given flat pixel indices, in chunks of `chunk`.
    pub fn classify_pixels(
        &self,
        cube: &HsiCube,
        pixels: &[usize],
        chunk: usize,
    ) -> Result<Tensor> {
        let mut rows = Vec::with_capacity(pixels.len() * self.config.classes);
        for part in pixels.chunks(chunk.max(1)) {
            let batch = patch_batch(cube, part, self.config.patch_size)?;
            rows.extend_from_slice(self.classify(&batch)?.data());
        }
        Tensor::new(vec![pixels.len(), self.config.classes], rows)
    }

    /// Replaces parameter values from `(tag, tensor)` pairs in store order.
    pub(crate) fn load_values(&mut self, values: Vec<(String, Tensor)>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Config(format!(
                "expected {} parameters, found {}",
                self.params.len(),
                values.len()
            )));
        }
        for (p, (tag, t)) in self.params.iter_mut().zip(values) {
            if p.tag != tag || p.value.shape() != t.shape() {
                return Err(Error::Config(format!(
                    "parameter `{tag}` {:?} does not match `{}` {:?}",
                    t.shape(),
                    p.tag,
                    p.value.shape()
                )));
            }
            p.value = t;
        }
        Ok(())
    }
}

/// Stacks reflect-padded patches around flat pixel indices into
/// `[B, C, w, w]`.
pub fn patch_batch(cube: &HsiCube, pixels: &[usize], w: usize) -> Result<Tensor> {
    let width = cube.width();
    let mut data = Vec::with_capacity(pixels.len() * cube.bands() * w * w);
    for &px in pixels {
        let patch = extract_patch(cube, (px / width, px % width), w)?;
        data.extend(patch.values.iter().map(|&v| v as f64));
    }
    Tensor::new(vec![pixels.len(), cube.bands(), w, w], data)
}

/// 1-based class of the largest entry per row; ties go to the lower class.
pub fn argmax_rows(probs: &Tensor) -> Vec<u16> {
    (0..probs.rows())
        .map(|r| {
            let row = probs.row(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best as u16 + 1
        })
        .collect()
}

#[cfg(test)]
#[path = "model_tests.rs"]
mod tests;
