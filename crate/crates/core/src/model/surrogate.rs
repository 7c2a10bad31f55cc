//! Layout-aware surrogate token classifier: word embeddings plus bucketed
//! coordinate embeddings feeding a transformer encoder and a BIO head.
//! Supplies the task loss and its gradients w.r.t. the summed input
//! embeddings.

use super::config::SurrogateConfig;
use super::encoder::{BoundEncoder, EncoderWeights};
use super::vocab::{LabelSet, Vocab};
use crate::data::Document;
use crate::diff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::geom::GRID_MAX;
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateWeights {
    pub word_emb: Tensor,
    /// x0, y0, x1, y1 tables.
    pub coord_embs: [Tensor; 4],
    pub pos_emb: Option<Tensor>,
    pub encoder: EncoderWeights,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

pub struct BoundSurrogate {
    word: Var,
    coords: [Var; 4],
    pos: Option<Var>,
    pub enc: BoundEncoder,
    head_w: Var,
    head_b: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    pub cfg: SurrogateConfig,
    pub vocab: Vocab,
    pub labels: LabelSet,
    pub weights: SurrogateWeights,
}

impl SurrogateModel {
    /// Fresh model with seeded initialization. The classification head
    /// starts at zero, so an untrained model emits uniform distributions.
    pub fn new(cfg: SurrogateConfig, vocab: Vocab, labels: LabelSet) -> Result<Self> {
        cfg.validate()?;
        if labels.is_empty() {
            return Err(Error::Config("label set is empty".into()));
        }
        let mut rng = stream(cfg.seed, "surrogate-init", 0);
        let d = cfg.dim;
        let std = cfg.embed_init_std;
        let word_emb = Tensor::randn(vec![vocab.len(), d], std, &mut rng);
        let coord_embs = [
            Tensor::randn(vec![cfg.coord_buckets, d], std, &mut rng),
            Tensor::randn(vec![cfg.coord_buckets, d], std, &mut rng),
            Tensor::randn(vec![cfg.coord_buckets, d], std, &mut rng),
            Tensor::randn(vec![cfg.coord_buckets, d], std, &mut rng),
        ];
        let pos_emb = cfg
            .positional
            .then(|| Tensor::randn(vec![cfg.max_tokens, d], std, &mut rng));
        let encoder = EncoderWeights::init(d, cfg.ffn_dim, cfg.layers, cfg.heads, &mut rng);
        Ok(SurrogateModel {
            weights: SurrogateWeights {
                word_emb,
                coord_embs,
                pos_emb,
                encoder,
                head_w: Tensor::zeros(vec![d, labels.len()]),
                head_b: Tensor::zeros(vec![labels.len()]),
            },
            cfg,
            vocab,
            labels,
        })
    }

    pub fn coord_bucket(&self, v: f64) -> usize {
        let b = self.cfg.coord_buckets as f64;
        let idx = (v / (GRID_MAX / b)).floor();
        (idx.max(0.0) as usize).min(self.cfg.coord_buckets - 1)
    }

    pub fn token_ids(&self, doc: &Document) -> Vec<usize> {
        doc.tokens
            .iter()
            .map(|t| self.vocab.id_of(&t.text))
            .collect()
    }

    /// Tokens that fall to the unknown id.
    pub fn vocab_misses(&self, doc: &Document) -> usize {
        doc.tokens
            .iter()
            .filter(|t| !self.vocab.is_known(&t.text))
            .count()
    }

    pub fn label_ids(&self, doc: &Document) -> Result<Vec<usize>> {
        doc.tokens
            .iter()
            .map(|t| self.labels.id_of(&t.label))
            .collect()
    }

    fn check_doc(&self, doc: &Document) -> Result<()> {
        if doc.tokens.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "document {} is empty",
                doc.id
            )));
        }
        if self.cfg.positional && doc.tokens.len() > self.cfg.max_tokens {
            return Err(Error::InvalidArgument(format!(
                "document {} has {} tokens, positional table holds {}",
                doc.id,
                doc.tokens.len(),
                self.cfg.max_tokens
            )));
        }
        Ok(())
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundSurrogate {
        let word_trainable = trainable && self.cfg.train_word_embeddings;
        let word = if word_trainable {
            g.input(&self.weights.word_emb)
        } else {
            g.constant(&self.weights.word_emb)
        };
        let mut up = |t: &Tensor| if trainable { g.input(t) } else { g.constant(t) };
        let coords = [
            up(&self.weights.coord_embs[0]),
            up(&self.weights.coord_embs[1]),
            up(&self.weights.coord_embs[2]),
            up(&self.weights.coord_embs[3]),
        ];
        let pos = self.weights.pos_emb.as_ref().map(&mut up);
        let head_w = up(&self.weights.head_w);
        let head_b = up(&self.weights.head_b);
        let enc = BoundEncoder::bind(g, &self.weights.encoder, trainable);
        BoundSurrogate {
            word,
            coords,
            pos,
            enc,
            head_w,
            head_b,
        }
    }

    /// Summed input embedding for each token: word + four coordinate
    /// lookups (+ position when enabled).
    pub fn embed(&self, g: &mut Graph, bound: &BoundSurrogate, doc: &Document) -> Result<Var> {
        self.check_doc(doc)?;
        let ids = self.token_ids(doc);
        let mut e = g.embedding(bound.word, &ids)?;
        let coords_of = |pick: fn(&crate::geom::BBox) -> f64| -> Vec<usize> {
            doc.tokens
                .iter()
                .map(|t| self.coord_bucket(pick(&t.bbox)))
                .collect()
        };
        let id_sets = [
            coords_of(|b| b.x0),
            coords_of(|b| b.y0),
            coords_of(|b| b.x1),
            coords_of(|b| b.y1),
        ];
        for (table, ids) in bound.coords.iter().zip(&id_sets) {
            let ce = g.embedding(*table, ids)?;
            e = g.add(e, ce)?;
        }
        if let Some(pos) = bound.pos {
            let idx: Vec<usize> = (0..doc.tokens.len()).collect();
            let pe = g.embedding(pos, &idx)?;
            e = g.add(e, pe)?;
        }
        Ok(e)
    }

    /// Detached embedding tensor (the quantity adversarial updates act on).
    pub fn embed_tensor(&self, doc: &Document) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let e = self.embed(&mut g, &bound, doc)?;
        Ok(g.value(e).clone())
    }

    pub fn logits_from_embeddings(
        &self,
        g: &mut Graph,
        bound: &BoundSurrogate,
        e: Var,
    ) -> Result<Var> {
        let enc = bound.enc.forward(g, e)?;
        let h = g.matmul(enc, bound.head_w)?;
        g.add_row(h, bound.head_b)
    }

    pub fn loss_from_embeddings(
        &self,
        g: &mut Graph,
        bound: &BoundSurrogate,
        e: Var,
        label_ids: &[usize],
    ) -> Result<Var> {
        let logits = self.logits_from_embeddings(g, bound, e)?;
        g.cross_entropy(logits, label_ids, None)
    }

    pub fn loss_from_doc(
        &self,
        g: &mut Graph,
        bound: &BoundSurrogate,
        doc: &Document,
    ) -> Result<Var> {
        let e = self.embed(g, bound, doc)?;
        let labels = self.label_ids(doc)?;
        self.loss_from_embeddings(g, bound, e, &labels)
    }

    /// Mean cross-entropy of the document under the current weights.
    pub fn task_loss(&self, doc: &Document) -> Result<f64> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let loss = self.loss_from_doc(&mut g, &bound, doc)?;
        g.value(loss).item()
    }

    /// Argmax BIO tags; ties resolve to the lowest label id.
    pub fn predict_tags(&self, doc: &Document) -> Result<Vec<String>> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let e = self.embed(&mut g, &bound, doc)?;
        let logits = self.logits_from_embeddings(&mut g, &bound, e)?;
        let t = g.value(logits);
        let (n, c) = t.dims2()?;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let row = &t.data()[i * c..(i + 1) * c];
            let mut best = 0;
            for j in 1..c {
                if row[j] > row[best] {
                    best = j;
                }
            }
            out.push(self.labels.tag(best).to_string());
        }
        Ok(out)
    }

    /// Canonical parameter order shared by the optimizer and checkpoints.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec![
            "word_emb".to_string(),
            "coord_x0".to_string(),
            "coord_y0".to_string(),
            "coord_x1".to_string(),
            "coord_y1".to_string(),
        ];
        if self.weights.pos_emb.is_some() {
            names.push("pos_emb".into());
        }
        names.extend(self.weights.encoder.params().into_iter().map(|(n, _)| n));
        names.push("head_w".into());
        names.push("head_b".into());
        names
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let w = &self.weights;
        let mut out: Vec<&Tensor> = vec![
            &w.word_emb,
            &w.coord_embs[0],
            &w.coord_embs[1],
            &w.coord_embs[2],
            &w.coord_embs[3],
        ];
        if let Some(p) = &w.pos_emb {
            out.push(p);
        }
        out.extend(w.encoder.params().into_iter().map(|(_, t)| t));
        out.push(&w.head_w);
        out.push(&w.head_b);
        out
    }

    /// Which canonical parameters the optimizer may update.
    pub fn trainable_mask(&self) -> Vec<bool> {
        let mut mask = vec![self.cfg.train_word_embeddings];
        mask.extend(std::iter::repeat_n(true, self.params().len() - 1));
        mask
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let w = &mut self.weights;
        let mut out: Vec<&mut Tensor> = Vec::new();
        out.push(&mut w.word_emb);
        let [c0, c1, c2, c3] = &mut w.coord_embs;
        out.push(c0);
        out.push(c1);
        out.push(c2);
        out.push(c3);
        if let Some(p) = &mut w.pos_emb {
            out.push(p);
        }
        out.extend(w.encoder.params_mut());
        out.push(&mut w.head_w);
        out.push(&mut w.head_b);
        out
    }
}

impl BoundSurrogate {
    /// Vars aligned with `SurrogateModel::param_names`.
    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![
            self.word,
            self.coords[0],
            self.coords[1],
            self.coords[2],
            self.coords[3],
        ];
        if let Some(p) = self.pos {
            out.push(p);
        }
        out.extend(self.enc.vars());
        out.push(self.head_w);
        out.push(self.head_b);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_corpus, SynthConfig};

    fn tiny_model(positional: bool, seed: u64) -> (SurrogateModel, crate::data::Corpus) {
        let corpus = synth_corpus(&SynthConfig {
            docs: 12,
            seed: 21,
            rasters: false,
            ..Default::default()
        });
        let vocab = Vocab::build(&corpus, 2);
        let labels = LabelSet::build(&corpus);
        let mut cfg = SurrogateConfig::desk(seed);
        cfg.positional = positional;
        (SurrogateModel::new(cfg, vocab, labels).unwrap(), corpus)
    }

    #[test]
    fn untrained_head_gives_uniform_loss() {
        let (m, corpus) = tiny_model(false, 1);
        let expected = (m.labels.len() as f64).ln();
        for d in corpus.docs.iter().take(4) {
            let l = m.task_loss(d).unwrap();
            assert!((l - expected).abs() < 1e-12, "loss {l} vs ln(C) {expected}");
        }
    }

    #[test]
    fn zero_shift_gives_bit_identical_loss() {
        let (m, corpus) = tiny_model(false, 1);
        let d = &corpus.docs[0];
        let mut shifted = d.clone();
        for t in shifted.tokens.iter_mut() {
            t.bbox = t.bbox.translated(0.0, 0.0);
        }
        assert_eq!(
            m.task_loss(d).unwrap().to_bits(),
            m.task_loss(&shifted).unwrap().to_bits()
        );
    }

    #[test]
    fn empty_document_is_rejected() {
        let (m, _) = tiny_model(false, 1);
        let doc = Document {
            id: "empty".into(),
            tokens: vec![],
            lines: vec![],
            raster: None,
            page: (10, 10),
        };
        assert!(m.task_loss(&doc).is_err());
    }

    #[test]
    fn same_seed_same_weights() {
        let (a, _) = tiny_model(false, 7);
        let (b, _) = tiny_model(false, 7);
        assert_eq!(a.weights, b.weights);
        let (c, _) = tiny_model(false, 8);
        assert_ne!(a.weights, c.weights);
    }

    #[test]
    fn predictions_permute_with_tokens_when_positional_disabled() {
        let (mut m, corpus) = tiny_model(false, 3);
        // give the head some signal so predictions are not all ties
        let mut rng = stream(9, "test-head", 0);
        m.weights.head_w = Tensor::randn(vec![m.cfg.dim, m.labels.len()], 0.4, &mut rng);
        let d = &corpus.docs[0];
        let tags = m.predict_tags(d).unwrap();

        let n = d.tokens.len();
        let perm: Vec<usize> = (0..n).rev().collect();
        let mut pd = d.clone();
        pd.tokens = perm.iter().map(|&i| d.tokens[i].clone()).collect();
        pd.lines = vec![];
        let ptags = m.predict_tags(&pd).unwrap();
        for (dst, &src) in perm.iter().enumerate() {
            assert_eq!(ptags[dst], tags[src]);
        }
    }

    #[test]
    fn bound_vars_align_with_params() {
        let (m, _) = tiny_model(true, 2);
        let mut g = Graph::new();
        let b = m.bind(&mut g, true);
        let vars = b.vars();
        let params = m.params();
        assert_eq!(vars.len(), params.len());
        assert_eq!(params.len(), m.param_names().len());
        for (v, p) in vars.iter().zip(params) {
            assert_eq!(g.value(*v).data(), p.data());
        }
    }
}
