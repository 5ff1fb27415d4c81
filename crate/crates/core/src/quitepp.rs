//! Hierarchical patch/variable encoder, cross-attention forecasting decoder
//! and classification head.

use crate::embed::TimeEmbedder;
use crate::error::{Error, Result};
use crate::nn::{AttnBlock, CrossAttnBlock, Mlp3};
use crate::params::{Init, ParamStore};
use crate::tensor::Tensor;

/// Learnable per-variable identity tokens `v_n`, `[N × D]`.
#[derive(Debug, Clone)]
pub struct VariableTokenBank {
    pub tokens: Tensor,
}

impl VariableTokenBank {
    pub fn new(ps: &mut ParamStore, name: &str, variables: usize, d: usize) -> Result<Self> {
        Ok(VariableTokenBank {
            tokens: ps.register(name, &[variables, d], Init::Normal { std: 0.02 })?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub patch: AttnBlock,
    pub variable: AttnBlock,
}

/// Alternates patch-level attention over `[c_n ; e_1n .. e_Mn]` with
/// variable-level attention over `[c_1 .. c_N]`.
#[derive(Debug, Clone)]
pub struct HierarchicalEncoder {
    pub bank: VariableTokenBank,
    pub layers: Vec<EncoderLayer>,
}

impl HierarchicalEncoder {
    pub fn new(ps: &mut ParamStore, prefix: &str, variables: usize, d: usize, heads: usize, depth: usize) -> Result<Self> {
        if depth == 0 {
            return Err(Error::Config("hierarchical encoder needs at least one layer".into()));
        }
        let bank = VariableTokenBank::new(ps, &format!("{prefix}.variables"), variables, d)?;
        let layers = (0..depth)
            .map(|l| {
                Ok(EncoderLayer {
                    patch: AttnBlock::new(ps, &format!("{prefix}.{l}.patch"), d, heads)?,
                    variable: AttnBlock::new(ps, &format!("{prefix}.{l}.variable"), d, heads)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(HierarchicalEncoder { bank, layers })
    }

    pub fn num_params(variables: usize, d: usize, depth: usize) -> usize {
        variables * d + depth * 2 * AttnBlock::num_params(d)
    }

    /// `E^patch [B × M × N × D]` -> `(C [B × N × D], E [B × M × N × D])`.
    pub fn encode(&self, patches: &Tensor) -> Result<(Tensor, Tensor)> {
        let s = patches.shape();
        if s.len() != 4 || s[2..] != *self.bank.tokens.shape() {
            return Err(Error::shape("encode", s, self.bank.tokens.shape()));
        }
        let (b, m, n, d) = (s[0], s[1], s[2], s[3]);
        let mut e = patches.permute(&[0, 2, 1, 3])?.reshape(&[b * n, m, d])?;
        let mut c = self.bank.tokens.reshape(&[1, n, d])?.broadcast_to(&[b, n, d])?;
        for layer in &self.layers {
            let seq = Tensor::concat(&[&c.reshape(&[b * n, 1, d])?, &e], 1)?;
            let h = layer.patch.forward(&seq, None)?;
            e = h.narrow(1, 1, m)?;
            c = layer.variable.forward(&h.narrow(1, 0, 1)?.reshape(&[b, n, d])?, None)?;
        }
        let e = e.reshape(&[b, n, m, d])?.permute(&[0, 2, 1, 3])?;
        Ok((c, e))
    }
}

/// Cross-attention decoder: future-time queries `u = φ(τ)` read the variable
/// summary (global path) and the patch tokens (local path); a 3-layer MLP
/// maps `[G ; R]` to a scalar.
#[derive(Debug, Clone)]
pub struct ForecastDecoder {
    pub time: TimeEmbedder,
    pub global: CrossAttnBlock,
    pub local: CrossAttnBlock,
    pub out: Mlp3,
}

impl ForecastDecoder {
    pub fn new(ps: &mut ParamStore, prefix: &str, time: &TimeEmbedder, heads: usize) -> Result<Self> {
        let d = time.dim();
        Self::from_parts(
            time.clone(),
            CrossAttnBlock::new(ps, &format!("{prefix}.global"), d, heads)?,
            CrossAttnBlock::new(ps, &format!("{prefix}.local"), d, heads)?,
            Mlp3::new(ps, &format!("{prefix}.out"), 2 * d, d, 1)?,
        )
    }

    pub fn from_parts(time: TimeEmbedder, global: CrossAttnBlock, local: CrossAttnBlock, out: Mlp3) -> Result<Self> {
        let d = time.dim();
        if out.inputs() != 2 * d {
            return Err(Error::Config(format!(
                "output network takes width {}, expected {}",
                out.inputs(),
                2 * d
            )));
        }
        Ok(ForecastDecoder {
            time,
            global,
            local,
            out,
        })
    }

    /// Excludes the shared time embedding.
    pub fn num_params(d: usize) -> usize {
        2 * CrossAttnBlock::num_params(d) + Mlp3::num_params(2 * d, d, 1)
    }

    pub fn dim(&self) -> usize {
        self.time.dim()
    }

    /// `τ [..] -> U [.. × D]`
    pub fn embed_future_queries(&self, taus: &Tensor) -> Result<Tensor> {
        self.time.forward(taus)
    }

    /// `U [S × Q × D]`, `C [S × D]` -> `G [S × Q × D]`.
    pub fn decode_global(&self, queries: &Tensor, summary: &Tensor) -> Result<Tensor> {
        let (s, d) = (summary.shape()[0], summary.shape()[1]);
        self.global.forward(queries, &summary.reshape(&[s, 1, d])?)
    }

    /// `U [S × Q × D]`, `E [S × M × D]` -> `R [S × Q × D]`.
    pub fn decode_local(&self, queries: &Tensor, patches: &Tensor) -> Result<Tensor> {
        self.local.forward(queries, patches)
    }

    /// `G, R [S × Q × D]` -> `Ŷ [S × Q]`.
    pub fn predict(&self, global: &Tensor, local: &Tensor) -> Result<Tensor> {
        if global.shape() != local.shape() {
            return Err(Error::shape("predict", global.shape(), local.shape()));
        }
        let (s, q) = (global.shape()[0], global.shape()[1]);
        self.out.forward(&Tensor::concat(&[global, local], -1)?)?.reshape(&[s, q])
    }

    /// `C [B × N × D]`, `E [B × M × N × D]`, `τ [B × N × Q]` -> `[B × N × Q]`.
    pub fn forward(&self, summary: &Tensor, patches: &Tensor, taus: &Tensor) -> Result<Tensor> {
        let (b, n, d) = (summary.shape()[0], summary.shape()[1], summary.shape()[2]);
        let m = patches.shape()[1];
        let q = taus.shape()[2];
        if patches.shape() != [b, m, n, d] || taus.shape()[..2] != [b, n] {
            return Err(Error::shape("decode", patches.shape(), taus.shape()));
        }
        let u = self.embed_future_queries(&taus.reshape(&[b * n, q])?)?;
        let g = self.decode_global(&u, &summary.reshape(&[b * n, d])?)?;
        let e = patches.permute(&[0, 2, 1, 3])?.reshape(&[b * n, m, d])?;
        let r = self.decode_local(&u, &e)?;
        self.predict(&g, &r)?.reshape(&[b, n, q])
    }

    /// The same future timestamps for every variable: `τ [L_pred]` ->
    /// `Ŷ [B × L_pred × N]`.
    pub fn forward_grid(&self, summary: &Tensor, patches: &Tensor, taus: &[f64]) -> Result<Tensor> {
        let (b, n) = (summary.shape()[0], summary.shape()[1]);
        let q = taus.len();
        let grid = Tensor::new(&[1, 1, q], taus.to_vec())?.broadcast_to(&[b, n, q])?;
        self.forward(summary, patches, &grid)?.permute(&[0, 2, 1])
    }
}

/// Flattens `C [B × N × D]` and maps it to class logits.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub mlp: Mlp3,
    pub classes: usize,
}

impl ClassifierHead {
    pub fn new(ps: &mut ParamStore, prefix: &str, variables: usize, d: usize, classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Config(format!(
                "classification needs at least 2 classes, got {classes}"
            )));
        }
        Ok(ClassifierHead {
            mlp: Mlp3::new(ps, prefix, variables * d, d, classes)?,
            classes,
        })
    }

    pub fn num_params(variables: usize, d: usize, classes: usize) -> usize {
        Mlp3::num_params(variables * d, d, classes)
    }

    pub fn forward(&self, summary: &Tensor) -> Result<Tensor> {
        let b = summary.shape()[0];
        let width = summary.numel() / b.max(1);
        if width != self.mlp.inputs() {
            return Err(Error::shape("classify", summary.shape(), &[b, self.mlp.inputs()]));
        }
        self.mlp.forward(&summary.reshape(&[b, width])?)
    }

    pub fn loss(&self, logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.classes) {
            return Err(Error::Config(format!(
                "label {bad} out of range for {} classes",
                self.classes
            )));
        }
        logits.cross_entropy(labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn decoder(d: usize, seed: u64) -> (ParamStore, ForecastDecoder) {
        let mut ps = ParamStore::new(seed);
        let time = TimeEmbedder::new(&mut ps, "time", d).unwrap();
        let dec = ForecastDecoder::new(&mut ps, "decoder", &time, 2).unwrap();
        (ps, dec)
    }

    #[test]
    fn encoder_shapes() {
        let mut ps = ParamStore::new(1);
        let enc = HierarchicalEncoder::new(&mut ps, "encoder", 3, 8, 2, 2).unwrap();
        assert_eq!(ps.num_scalars(), HierarchicalEncoder::num_params(3, 8, 2));
        let (c, e) = enc.encode(&random(&[2, 4, 3, 8], 2)).unwrap();
        assert_eq!(c.shape(), [2, 3, 8]);
        assert_eq!(e.shape(), [2, 4, 3, 8]);
    }

    #[test]
    fn encoder_rejects_wrong_variable_count() {
        let mut ps = ParamStore::new(1);
        let enc = HierarchicalEncoder::new(&mut ps, "encoder", 3, 8, 2, 1).unwrap();
        assert!(matches!(enc.encode(&random(&[1, 4, 2, 8], 2)), Err(Error::Shape { .. })));
    }

    #[test]
    fn single_variable_summary_matches_manual_pass() {
        let mut ps = ParamStore::new(3);
        let enc = HierarchicalEncoder::new(&mut ps, "encoder", 1, 4, 1, 1).unwrap();
        let x = random(&[1, 2, 1, 4], 4);
        let (c, _) = enc.encode(&x).unwrap();
        let seq = Tensor::concat(
            &[&enc.bank.tokens.reshape(&[1, 1, 4]).unwrap(), &x.reshape(&[1, 2, 4]).unwrap()],
            1,
        )
        .unwrap();
        let h = enc.layers[0].patch.forward(&seq, None).unwrap().narrow(1, 0, 1).unwrap();
        let expected = enc.layers[0].variable.forward(&h, None).unwrap();
        assert_eq!(c.to_vec(), expected.to_vec());
    }

    #[test]
    fn variable_tokens_receive_gradient() {
        let mut ps = ParamStore::new(5);
        let enc = HierarchicalEncoder::new(&mut ps, "encoder", 2, 4, 1, 1).unwrap();
        let x = random(&[1, 2, 2, 4], 6);
        let w = random(&[1, 2, 4], 7);
        let params = vec![("v".to_string(), enc.bank.tokens.clone())];
        let report = crate::gradcheck::finite_diff_check_params(|| enc.encode(&x)?.0.mul(&w)?.sum(), &params, 1e-5).unwrap();
        assert!(report[0].1.passes(1e-4), "{:?}", report[0].1);
    }

    #[test]
    fn identical_query_times_give_identical_rows() {
        let (_, dec) = decoder(8, 1);
        let u = dec
            .embed_future_queries(&Tensor::new(&[3], vec![0.4, 0.9, 0.4]).unwrap())
            .unwrap()
            .to_vec();
        assert_eq!(u[0..8], u[16..24]);
        assert_ne!(u[0..8], u[8..16]);
    }

    #[test]
    fn single_key_attention_term_is_query_independent() {
        let (_, dec) = decoder(8, 2);
        let c = random(&[1, 1, 8], 3);
        let (a1, w1) = dec.global.attention(&random(&[1, 5, 8], 4), &c).unwrap();
        let (a2, _) = dec.global.attention(&random(&[1, 5, 8], 5), &c).unwrap();
        assert!(w1.to_vec().iter().all(|&w| w == 1.0));
        let (a1, a2) = (a1.to_vec(), a2.to_vec());
        for j in 0..5 {
            for k in 0..8 {
                assert!((a1[j * 8 + k] - a1[k]).abs() < 1e-12);
                assert!((a1[j * 8 + k] - a2[j * 8 + k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_summary_gives_zero_attention_term() {
        let (_, dec) = decoder(8, 3);
        let (a, _) = dec
            .global
            .attention(&random(&[1, 5, 8], 6), &Tensor::zeros(&[1, 1, 8]))
            .unwrap();
        assert!(a.to_vec().iter().all(|&v| v == 0.0));
        let g = dec.decode_global(&random(&[1, 5, 8], 6), &Tensor::zeros(&[1, 8])).unwrap();
        assert_eq!(g.shape(), [1, 5, 8]);
    }

    #[test]
    fn local_attention_rows_are_normalized() {
        let (_, dec) = decoder(8, 4);
        let (_, w) = dec.local.attention(&random(&[2, 3, 8], 7), &random(&[2, 4, 8], 8)).unwrap();
        for row in w.to_vec().chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_patch_tokens_make_local_path_logit_free() {
        let (_, dec) = decoder(8, 5);
        let token = random(&[1, 1, 8], 9);
        let patches = token.broadcast_to(&[1, 4, 8]).unwrap();
        let u = random(&[1, 3, 8], 10);
        let a = dec.decode_local(&u, &patches).unwrap().to_vec();
        dec.local.attn.query.weight.set_data(&random(&[8, 8], 11).to_vec()).unwrap();
        let b = dec.decode_local(&u, &patches).unwrap().to_vec();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn single_patch_local_path_has_global_structure() {
        let (_, dec) = decoder(8, 6);
        let (_, w) = dec.local.attention(&random(&[1, 3, 8], 12), &random(&[1, 1, 8], 13)).unwrap();
        assert!(w.to_vec().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn zero_output_weights_predict_last_bias() {
        let (_, dec) = decoder(4, 7);
        for layer in &dec.out.layers {
            layer.weight.set_data(&vec![0.0; layer.weight.numel()]).unwrap();
        }
        dec.out.layers[2].bias.set_data(&[0.75]).unwrap();
        let y = dec
            .forward_grid(&random(&[2, 3, 4], 1), &random(&[2, 2, 3, 4], 2), &[0.5, 0.6, 0.9, 1.0, 0.7])
            .unwrap();
        assert_eq!(y.shape(), [2, 5, 3]);
        assert!(y.to_vec().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn mismatched_output_width_fails_at_build() {
        let mut ps = ParamStore::new(0);
        let time = TimeEmbedder::new(&mut ps, "time", 4).unwrap();
        let g = CrossAttnBlock::new(&mut ps, "g", 4, 1).unwrap();
        let l = CrossAttnBlock::new(&mut ps, "l", 4, 1).unwrap();
        let out = Mlp3::new(&mut ps, "o", 4, 4, 1).unwrap();
        assert!(ForecastDecoder::from_parts(time, g, l, out).is_err());
    }

    #[test]
    fn decoder_parameter_count() {
        let (ps, _) = decoder(8, 0);
        assert_eq!(ps.num_scalars() - 16, ForecastDecoder::num_params(8));
    }

    #[test]
    fn classifier_logits_and_labels() {
        let mut ps = ParamStore::new(0);
        let head = ClassifierHead::new(&mut ps, "head", 3, 4, 2).unwrap();
        let c = random(&[5, 3, 4], 1);
        let a = head.forward(&c).unwrap();
        assert_eq!(a.shape(), [5, 2]);
        assert_eq!(a.to_vec(), head.forward(&c).unwrap().to_vec());
        assert!(head.loss(&a, &[0, 1, 1, 0, 2]).is_err());
        assert!(ClassifierHead::new(&mut ps, "h1", 3, 4, 1).is_err());
        let even = Tensor::new(&[1, 2], vec![2.0, 2.0]).unwrap();
        assert!((head.loss(&even, &[0]).unwrap().item() - 2f64.ln()).abs() < 1e-12);
    }
}
