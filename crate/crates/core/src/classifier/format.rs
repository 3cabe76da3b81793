//! Binary model file layout (all integers little-endian):
//!
//! ```text
//! magic          4 bytes  "KSMF"
//! schema_version u16
//! kind           u8       1 = forest, 2 = logistic
//! payload_len    u64
//! payload        payload_len bytes
//! digest         32 bytes SHA-256 of payload
//! ```
//!
//! Full description in `docs/model-format.md`.

use sha2::{Digest, Sha256};

use super::forest::{DecisionTree, ForestModel, ForestParams, TreeNode};
use super::logistic::{LogisticModel, LogisticParams};
use super::{ClassifierError, Model};

pub const MODEL_MAGIC: [u8; 4] = *b"KSMF";
pub const MODEL_SCHEMA_VERSION: u16 = 1;

const KIND_FOREST: u8 = 1;
const KIND_LOGISTIC: u8 = 2;
const TAG_LEAF: u8 = 0;
const TAG_SPLIT: u8 = 1;

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("value fits the u32 field");
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_bits().to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ClassifierError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len()).ok_or_else(|| {
            ClassifierError::CorruptModel(format!("truncated at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, ClassifierError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, ClassifierError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<usize, ClassifierError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64, ClassifierError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, ClassifierError> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn frame(kind: u8, payload: Vec<u8>) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + 47);
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&MODEL_SCHEMA_VERSION.to_le_bytes());
    out.push(kind);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&Sha256::digest(&payload));
    out
}

pub(crate) fn encode_forest(m: &ForestModel) -> Vec<u8> {
    let mut w = Writer::default();
    w.u32(m.params.n_trees);
    w.u32(m.params.max_depth);
    w.u32(m.params.min_leaf);
    w.u32(m.params.resolved_features_per_split(m.feature_dim));
    w.u64(m.seed);
    w.u32(m.feature_dim);
    w.u32(m.class_count);
    w.u32(m.trees.len());
    for t in &m.trees {
        w.u32(t.nodes.len());
        for node in &t.nodes {
            match node {
                TreeNode::Leaf { counts } => {
                    w.u8(TAG_LEAF);
                    for c in counts {
                        w.u32(*c as usize);
                    }
                }
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    w.u8(TAG_SPLIT);
                    w.u32(*feature);
                    w.f64(*threshold);
                    w.u32(*left);
                    w.u32(*right);
                }
            }
        }
    }
    frame(KIND_FOREST, w.0)
}

pub(crate) fn encode_logistic(m: &LogisticModel) -> Vec<u8> {
    let mut w = Writer::default();
    w.u32(m.dim());
    w.u32(m.class_count());
    w.f64(m.params.learning_rate);
    w.u32(m.params.epochs);
    w.f64(m.params.l2);
    for v in m.means.iter().chain(&m.scales) {
        w.f64(*v);
    }
    for v in m.weights.iter().flatten() {
        w.f64(*v);
    }
    frame(KIND_LOGISTIC, w.0)
}

fn corrupt(msg: impl Into<String>) -> ClassifierError {
    ClassifierError::CorruptModel(msg.into())
}

fn decode_forest(r: &mut Reader) -> Result<ForestModel, ClassifierError> {
    let params = ForestParams {
        n_trees: r.u32()?,
        max_depth: r.u32()?,
        min_leaf: r.u32()?,
        features_per_split: Some(r.u32()?),
    };
    let seed = r.u64()?;
    let feature_dim = r.u32()?;
    let class_count = r.u32()?;
    let tree_count = r.u32()?;
    if tree_count == 0 || class_count == 0 {
        return Err(corrupt("forest without trees or classes"));
    }
    let mut trees = Vec::with_capacity(tree_count.min(1 << 16));
    for _ in 0..tree_count {
        let node_count = r.u32()?;
        if node_count == 0 {
            return Err(corrupt("empty tree"));
        }
        let mut nodes = Vec::with_capacity(node_count.min(1 << 20));
        for i in 0..node_count {
            nodes.push(match r.u8()? {
                TAG_LEAF => TreeNode::Leaf {
                    counts: (0..class_count)
                        .map(|_| r.u32().map(|c| c as u32))
                        .collect::<Result<_, _>>()?,
                },
                TAG_SPLIT => {
                    let feature = r.u32()?;
                    let threshold = r.f64()?;
                    let (left, right) = (r.u32()?, r.u32()?);
                    let child_ok = |c: usize| c > i && c < node_count;
                    if feature >= feature_dim || !child_ok(left) || !child_ok(right) {
                        return Err(corrupt(format!("bad split node {i}")));
                    }
                    TreeNode::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    }
                }
                t => return Err(corrupt(format!("unknown node tag {t}"))),
            });
        }
        trees.push(DecisionTree { nodes });
    }
    Ok(ForestModel {
        trees,
        params,
        seed,
        feature_dim,
        class_count,
    })
}

fn decode_logistic(r: &mut Reader) -> Result<LogisticModel, ClassifierError> {
    let dim = r.u32()?;
    let class_count = r.u32()?;
    let params = LogisticParams {
        learning_rate: r.f64()?,
        epochs: r.u32()?,
        l2: r.f64()?,
    };
    let mut read_vec = |n: usize| (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>();
    let means = read_vec(dim)?;
    let scales = read_vec(dim)?;
    let weights = (0..class_count)
        .map(|_| read_vec(dim + 1))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LogisticModel {
        params,
        means,
        scales,
        weights,
    })
}

pub(crate) fn decode(bytes: &[u8]) -> Result<Model, ClassifierError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MODEL_MAGIC {
        return Err(corrupt("bad magic bytes"));
    }
    let version = r.u16()?;
    if version != MODEL_SCHEMA_VERSION {
        return Err(ClassifierError::VersionMismatch {
            found: version,
            expected: MODEL_SCHEMA_VERSION,
        });
    }
    let kind = r.u8()?;
    let len = usize::try_from(r.u64()?).map_err(|_| corrupt("payload length overflow"))?;
    let payload = r.take(len)?;
    let digest = r.take(32)?;
    if !r.done() {
        return Err(corrupt("trailing bytes"));
    }
    if Sha256::digest(payload).as_slice() != digest {
        return Err(corrupt("checksum mismatch"));
    }
    let mut p = Reader { buf: payload, pos: 0 };
    let model = match kind {
        KIND_FOREST => Model::Forest(decode_forest(&mut p)?),
        KIND_LOGISTIC => Model::Logistic(decode_logistic(&mut p)?),
        k => return Err(corrupt(format!("unknown model kind {k}"))),
    };
    if !p.done() {
        return Err(corrupt("payload has trailing bytes"));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::super::{Dataset, ForestParams, LogisticParams};
    use super::*;

    fn data() -> Dataset {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, (i * 7 % 11) as f64]).collect();
        let labels = (0..30).map(|i| i % 3).collect();
        Dataset::new(rows, labels, 3).unwrap()
    }

    fn forest() -> Model {
        let p = ForestParams {
            n_trees: 7,
            ..Default::default()
        };
        Model::train(&data(), &super::super::ClassifierParams::Forest(p), 9).unwrap()
    }

    #[test]
    fn round_trips() {
        let f = forest();
        assert_eq!(Model::from_bytes(&f.to_bytes()).unwrap(), f);
        let l = Model::train(
            &data(),
            &super::super::ClassifierParams::Logistic(LogisticParams::default()),
            0,
        )
        .unwrap();
        assert_eq!(Model::from_bytes(&l.to_bytes()).unwrap(), l);
    }

    #[test]
    fn truncated_is_corrupt() {
        let bytes = forest().to_bytes();
        for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                Model::from_bytes(&bytes[..cut]),
                Err(ClassifierError::CorruptModel(_))
            ));
        }
    }

    #[test]
    fn flipped_bit_is_corrupt() {
        let mut bytes = forest().to_bytes();
        let i = bytes.len() / 2;
        bytes[i] ^= 0x10;
        assert!(matches!(
            Model::from_bytes(&bytes),
            Err(ClassifierError::CorruptModel(_))
        ));
    }

    #[test]
    fn older_schema_rejected() {
        let mut bytes = forest().to_bytes();
        bytes[4..6].copy_from_slice(&0u16.to_le_bytes());
        assert!(matches!(
            Model::from_bytes(&bytes),
            Err(ClassifierError::VersionMismatch { found: 0, expected: 1 })
        ));
    }
}
