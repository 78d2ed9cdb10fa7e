//! Static per-object vision and language features.
//!
//! # Store format
//!
//! All integers little-endian, floats IEEE-754 f32 little-endian.
//!
//! ```text
//! magic         4 bytes  "SDES"
//! version       u8       1
//! d_vision      u32
//! d_language    u32
//! object_count  u32
//! per object:
//!   id_len u32, id utf-8
//!   view_count u32 (must be 5), view_dim u32 (must equal d_vision)
//!   view_count x view_dim f32        views: front, back, left, right, top-down
//!   expression_count u32
//!   per expression:
//!     token_count u32
//!     per token:
//!       text_len u32, text utf-8
//!       vector_dim u32                 0 = out of vocabulary, else must equal d_language
//!       vector_dim x f32
//! ```
//!
//! Trailing bytes after the last object are rejected.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{CoreError, Result};

pub const STORE_MAGIC: &[u8; 4] = b"SDES";
pub const STORE_VERSION: u8 = 1;
pub const VIEW_COUNT: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct Token {
    pub text: String,
    /// `None` for out-of-vocabulary tokens.
    pub vector: Option<Vec<f32>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectFeatures {
    pub views: Vec<Vec<f32>>,
    pub expressions: Vec<Vec<Token>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmbeddingDims {
    pub vision: usize,
    pub language: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    dims: EmbeddingDims,
    objects: BTreeMap<String, ObjectFeatures>,
}

/// Out-of-vocabulary tokens encountered while loading; they are skipped when averaging.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoadReport {
    pub oov_tokens: Vec<(String, String)>,
    pub empty_expressions: Vec<(String, usize)>,
}

/// Vision and language differences between a grasped and a target object.
#[derive(Clone, Debug, PartialEq)]
pub struct PairEmbedding {
    pub vision_delta: Vec<f32>,
    pub language_delta: Vec<f32>,
}

impl PairEmbedding {
    pub fn zeros(dims: EmbeddingDims) -> Self {
        Self { vision_delta: vec![0.0; dims.vision], language_delta: vec![0.0; dims.language] }
    }
}

fn mean_of<'a>(vectors: impl Iterator<Item = &'a [f32]>, dim: usize) -> Option<Vec<f32>> {
    let mut acc = vec![0f64; dim];
    let mut n = 0usize;
    for v in vectors {
        acc.iter_mut().zip(v).for_each(|(a, &x)| *a += x as f64);
        n += 1;
    }
    (n > 0).then(|| acc.into_iter().map(|a| (a / n as f64) as f32).collect())
}

impl EmbeddingStore {
    /// Builds a store and enforces every invariant; see [`load_store`] for the file route.
    pub fn new(dims: EmbeddingDims, objects: BTreeMap<String, ObjectFeatures>) -> Result<(Self, LoadReport)> {
        let mut report = LoadReport::default();
        for (id, obj) in &objects {
            let ctx = || format!("embedding store object {id:?}");
            if obj.views.len() != VIEW_COUNT {
                return Err(CoreError::format(ctx(), format!("{} view vectors, expected {VIEW_COUNT}", obj.views.len())));
            }
            if let Some(v) = obj.views.iter().find(|v| v.len() != dims.vision) {
                return Err(CoreError::format(ctx(), format!("view of dimension {}, store declares {}", v.len(), dims.vision)));
            }
            if obj.expressions.is_empty() {
                return Err(CoreError::format(ctx(), "no referring expressions"));
            }
            let mut embeddable = 0;
            for (ei, expr) in obj.expressions.iter().enumerate() {
                let mut in_expr = 0;
                for tok in expr {
                    match &tok.vector {
                        Some(v) if v.len() != dims.language => {
                            return Err(CoreError::format(
                                ctx(),
                                format!("token {:?} has dimension {}, store declares {}", tok.text, v.len(), dims.language),
                            ))
                        }
                        Some(_) => in_expr += 1,
                        None => report.oov_tokens.push((id.clone(), tok.text.clone())),
                    }
                }
                if in_expr == 0 {
                    report.empty_expressions.push((id.clone(), ei));
                }
                embeddable += in_expr;
            }
            if embeddable == 0 {
                return Err(CoreError::format(ctx(), "no embeddable tokens in any referring expression"));
            }
            if obj.views.iter().flatten().chain(obj.expressions.iter().flatten().filter_map(|t| t.vector.as_ref()).flatten()).any(|x| !x.is_finite()) {
                return Err(CoreError::format(ctx(), "non-finite value"));
            }
        }
        Ok((Self { dims, objects }, report))
    }

    pub fn dims(&self) -> EmbeddingDims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.objects.keys().map(String::as_str)
    }

    pub fn object(&self, id: &str) -> Result<&ObjectFeatures> {
        self.objects.get(id).ok_or_else(|| CoreError::UnknownObject(id.to_string()))
    }

    pub fn objects(&self) -> &BTreeMap<String, ObjectFeatures> {
        &self.objects
    }
}

/// Mean of the five view vectors.
pub fn object_vision_embedding(store: &EmbeddingStore, id: &str) -> Result<Vec<f32>> {
    let obj = store.object(id)?;
    Ok(mean_of(obj.views.iter().map(Vec::as_slice), store.dims.vision).expect("five views"))
}

/// Mean over every embeddable token occurrence, pooled flat across all expressions.
pub fn object_language_embedding(store: &EmbeddingStore, id: &str) -> Result<Vec<f32>> {
    let obj = store.object(id)?;
    let tokens = obj.expressions.iter().flatten().filter_map(|t| t.vector.as_deref());
    mean_of(tokens, store.dims.language)
        .ok_or_else(|| CoreError::Data(format!("object {id:?} has no embeddable tokens")))
}

/// `emb(grasped) - emb(target)` in both modalities.
pub fn pair_embedding(store: &EmbeddingStore, grasped: &str, target: &str) -> Result<PairEmbedding> {
    let (vg, vt) = (object_vision_embedding(store, grasped)?, object_vision_embedding(store, target)?);
    let (lg, lt) = (object_language_embedding(store, grasped)?, object_language_embedding(store, target)?);
    Ok(PairEmbedding {
        vision_delta: vg.iter().zip(&vt).map(|(a, b)| a - b).collect(),
        language_delta: lg.iter().zip(&lt).map(|(a, b)| a - b).collect(),
    })
}

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| CoreError::Argument(format!("{v} does not fit in u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(buf: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(buf, s.len())?;
    buf.extend_from_slice(s.as_bytes());
    Ok(())
}

fn put_f32s(buf: &mut Vec<u8>, xs: &[f32]) {
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_store(store: &EmbeddingStore) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(STORE_MAGIC);
    buf.push(STORE_VERSION);
    put_u32(&mut buf, store.dims.vision)?;
    put_u32(&mut buf, store.dims.language)?;
    put_u32(&mut buf, store.objects.len())?;
    for (id, obj) in &store.objects {
        put_str(&mut buf, id)?;
        put_u32(&mut buf, obj.views.len())?;
        put_u32(&mut buf, store.dims.vision)?;
        obj.views.iter().for_each(|v| put_f32s(&mut buf, v));
        put_u32(&mut buf, obj.expressions.len())?;
        for expr in &obj.expressions {
            put_u32(&mut buf, expr.len())?;
            for tok in expr {
                put_str(&mut buf, &tok.text)?;
                match &tok.vector {
                    Some(v) => {
                        put_u32(&mut buf, v.len())?;
                        put_f32s(&mut buf, v);
                    }
                    None => put_u32(&mut buf, 0)?,
                }
            }
        }
    }
    Ok(buf)
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_store(path: &Path, store: &EmbeddingStore) -> Result<()> {
    let bytes = encode_store(store)?;
    let tmp = path.with_extension("tmp-write");
    let mut f = fs::File::create(&tmp).map_err(|e| CoreError::io(&tmp, e))?;
    f.write_all(&bytes).and_then(|_| f.sync_all()).map_err(|e| CoreError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| CoreError::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    ctx: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(CoreError::format(self.ctx.clone(), format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)?;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| CoreError::format(self.ctx.clone(), format!("{what} is not UTF-8")))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let b = self.take(n.checked_mul(4).ok_or_else(|| CoreError::format(self.ctx.clone(), "size overflow"))?, what)?;
        Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }
}

pub fn decode_store(bytes: &[u8], context: &str) -> Result<(EmbeddingStore, LoadReport)> {
    let mut r = Reader { buf: bytes, pos: 0, ctx: context.to_string() };
    if r.take(4, "magic")? != STORE_MAGIC {
        return Err(CoreError::format(context, "bad magic"));
    }
    let version = r.take(1, "version")?[0];
    if version != STORE_VERSION {
        return Err(CoreError::format(context, format!("unknown version {version}")));
    }
    let dims = EmbeddingDims { vision: r.u32("d_vision")?, language: r.u32("d_language")? };
    let count = r.u32("object count")?;
    let mut objects = BTreeMap::new();
    for _ in 0..count {
        let id = r.string("object id")?;
        let obj_ctx = |d: String| CoreError::format(format!("{context}: object {id:?}"), d);
        let view_count = r.u32("view count")?;
        let view_dim = r.u32("view dim")?;
        if view_count != VIEW_COUNT {
            return Err(obj_ctx(format!("{view_count} view vectors, expected {VIEW_COUNT}")));
        }
        if view_dim != dims.vision {
            return Err(obj_ctx(format!("view dimension {view_dim}, store declares {}", dims.vision)));
        }
        let views = (0..view_count).map(|_| r.f32s(view_dim, "view vector")).collect::<Result<Vec<_>>>()?;
        let n_expr = r.u32("expression count")?;
        let mut expressions = Vec::with_capacity(n_expr.min(1024));
        for _ in 0..n_expr {
            let n_tok = r.u32("token count")?;
            let mut expr = Vec::with_capacity(n_tok.min(1024));
            for _ in 0..n_tok {
                let text = r.string("token text")?;
                let dim = r.u32("token vector dim")?;
                let vector = match dim {
                    0 => None,
                    d if d == dims.language => Some(r.f32s(d, "token vector")?),
                    d => return Err(obj_ctx(format!("token {text:?} has dimension {d}, store declares {}", dims.language))),
                };
                expr.push(Token { text, vector });
            }
            expressions.push(expr);
        }
        if objects.insert(id.clone(), ObjectFeatures { views, expressions }).is_some() {
            return Err(CoreError::format(context, format!("duplicate object {id:?}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(CoreError::format(context, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    EmbeddingStore::new(dims, objects)
}

pub fn load_store(path: &Path) -> Result<(EmbeddingStore, LoadReport)> {
    let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
    decode_store(&bytes, &path.display().to_string())
}
