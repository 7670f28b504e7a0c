//! `EBDN` checkpoint files.
//!
//! All integers and floats are little-endian. Layout, version 1:
//!
//! ```text
//! header
//!   magic            4 bytes  "EBDN"
//!   version          u32      1
//!   fusion_mode      u8       0 standard, 1 aggregative, 2 gradient
//!   arch             u8       0 rbm, 1 alpha, 2 beta, 3 iota, 4 zeta
//!   dbn_layers       u32      L
//!   per DBN layer:
//!     n_visible      u64
//!     n_hidden       u64
//!     visible_kind   u8       0 bernoulli, 1 gaussian
//!     cd_k           u32
//!     learning_rate  f64
//!     momentum       f64
//!     batch_size     u32
//!     epochs         u32
//!     gibbs          u8       0 stochastic, 1 mean-field
//!   head_layers      u32      H (0 before fine-tuning)
//!   per head layer:
//!     inputs         u64
//!     outputs        u64
//!     activation     u8       0 logistic, 1 softmax
//!   optimizer        u8       0 absent, 1 Adam state follows the parameters
//! payload (f64)
//!   per DBN layer:   W (n_visible × n_hidden, row-major), b, c, σ (gaussian only)
//!   per head layer:  W (inputs × outputs, row-major), bias
//!   if optimizer:    for each DBN layer then each head layer, two Adam
//!                    states (weights, then bias); each state is
//!                    t: u64, m: f64 × len, v: f64 × len
//! ```
//!
//! Nothing may follow the payload.

use std::path::Path;

use adbn_core::dbn::{Architecture, DbnStack};
use adbn_core::head::{Activation, AdamState, DenseLayer, OptimizerState};
use adbn_core::rbm::{GibbsMode, RbmParams};
use adbn_core::{CdConfig, Error, FusionMode, Matrix, Network, Result, VisibleKind};

pub const MAGIC: &[u8; 4] = b"EBDN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stack: DbnStack,
    /// Empty until fine-tuning attaches a head.
    pub head: Vec<DenseLayer>,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn pretrained(stack: DbnStack) -> Self {
        Checkpoint {
            stack,
            head: Vec::new(),
            optimizer: None,
        }
    }

    pub fn finetuned(net: Network, optimizer: Option<OptimizerState>) -> Self {
        Checkpoint {
            stack: net.stack,
            head: net.head,
            optimizer,
        }
    }

    /// The fine-tuned network, if a head is attached.
    pub fn network(&self) -> Result<Network> {
        if self.head.is_empty() {
            return Err(Error::precondition("checkpoint has no classification head; run finetune first"));
        }
        Network::new(self.stack.clone(), self.head.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.stack.validate()?;
        if !self.head.is_empty() {
            self.network()?;
        }
        if let Some(opt) = &self.optimizer {
            check_optimizer_shapes(opt, &self.stack, &self.head)?;
        }
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u8(self.stack.fusion_mode.tag());
        w.u8(self.stack.arch.tag());
        w.u32(len_u32(self.stack.layers.len())?);
        for (layer, cd) in self.stack.layers.iter().zip(&self.stack.per_layer_cd) {
            w.u64(layer.n_visible() as u64);
            w.u64(layer.n_hidden() as u64);
            w.u8(layer.kind.tag());
            w.u32(len_u32(cd.k)?);
            w.f64(cd.learning_rate);
            w.f64(cd.momentum);
            w.u32(len_u32(cd.batch_size)?);
            w.u32(len_u32(cd.epochs)?);
            w.u8(gibbs_tag(cd.gibbs));
        }
        w.u32(len_u32(self.head.len())?);
        for layer in &self.head {
            w.u64(layer.inputs() as u64);
            w.u64(layer.outputs() as u64);
            w.u8(layer.activation.tag());
        }
        w.u8(u8::from(self.optimizer.is_some()));

        for layer in &self.stack.layers {
            w.f64s(layer.weights.as_slice());
            w.f64s(&layer.visible_bias);
            w.f64s(&layer.hidden_bias);
            w.f64s(&layer.sigma);
        }
        for layer in &self.head {
            w.f64s(layer.weights.as_slice());
            w.f64s(&layer.bias);
        }
        if let Some(opt) = &self.optimizer {
            for (sw, sb) in opt.dbn.iter().chain(&opt.head) {
                for s in [sw, sb] {
                    w.u64(s.t);
                    w.f64s(&s.m);
                    w.f64s(&s.v);
                }
            }
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::data("not an EBDN checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::data(format!("unsupported checkpoint version {version}")));
        }
        let fusion_mode = FusionMode::from_tag(r.u8()?)
            .ok_or_else(|| Error::data("unknown fusion mode tag"))?;
        let arch = Architecture::from_tag(r.u8()?)
            .ok_or_else(|| Error::data("unknown architecture tag"))?;

        let n_layers = r.u32()? as usize;
        let mut dims = Vec::new();
        let mut per_layer_cd = Vec::new();
        for _ in 0..n_layers {
            let m = r.dim()?;
            let n = r.dim()?;
            let kind = VisibleKind::from_tag(r.u8()?)
                .ok_or_else(|| Error::data("unknown visible kind tag"))?;
            dims.push((m, n, kind));
            per_layer_cd.push(CdConfig {
                k: r.u32()? as usize,
                learning_rate: r.f64()?,
                momentum: r.f64()?,
                batch_size: r.u32()? as usize,
                epochs: r.u32()? as usize,
                gibbs: gibbs_from_tag(r.u8()?)?,
            });
        }
        let n_head = r.u32()? as usize;
        let mut head_dims = Vec::new();
        for _ in 0..n_head {
            let i = r.dim()?;
            let o = r.dim()?;
            let act = Activation::from_tag(r.u8()?)
                .ok_or_else(|| Error::data("unknown activation tag"))?;
            head_dims.push((i, o, act));
        }
        let has_optimizer = match r.u8()? {
            0 => false,
            1 => true,
            t => return Err(Error::data(format!("bad optimizer flag {t}"))),
        };

        let mut layers = Vec::with_capacity(n_layers);
        for &(m, n, kind) in &dims {
            let weights = Matrix::from_vec(m, n, r.f64s(checked_mul(m, n)?)?)
                .map_err(|e| Error::data(format!("layer weights: {e}")))?;
            let visible_bias = r.f64s(m)?;
            let hidden_bias = r.f64s(n)?;
            let sigma = match kind {
                VisibleKind::Gaussian => r.f64s(m)?,
                VisibleKind::Bernoulli => Vec::new(),
            };
            layers.push(RbmParams {
                weights,
                visible_bias,
                hidden_bias,
                kind,
                sigma,
            });
        }
        let mut head = Vec::with_capacity(n_head);
        for &(i, o, activation) in &head_dims {
            let weights = Matrix::from_vec(i, o, r.f64s(checked_mul(i, o)?)?)
                .map_err(|e| Error::data(format!("head weights: {e}")))?;
            head.push(DenseLayer {
                weights,
                bias: r.f64s(o)?,
                activation,
            });
        }
        let optimizer = if has_optimizer {
            let mut state = |len: usize| -> Result<AdamState> {
                let t = r.u64()?;
                Ok(AdamState {
                    t,
                    m: r.f64s(len)?,
                    v: r.f64s(len)?,
                })
            };
            let mut dbn = Vec::new();
            for &(m, n, _) in &dims {
                dbn.push((state(m * n)?, state(n)?));
            }
            let mut head_states = Vec::new();
            for &(i, o, _) in &head_dims {
                head_states.push((state(i * o)?, state(o)?));
            }
            Some(OptimizerState {
                dbn,
                head: head_states,
            })
        } else {
            None
        };
        if r.pos != bytes.len() {
            return Err(Error::data(format!(
                "{} trailing bytes after checkpoint payload",
                bytes.len() - r.pos
            )));
        }

        let stack = DbnStack {
            arch,
            fusion_mode,
            layers,
            per_layer_cd,
        };
        stack
            .validate()
            .map_err(|e| Error::data(format!("checkpoint stack: {e}")))?;
        let ckpt = Checkpoint {
            stack,
            head,
            optimizer,
        };
        if !ckpt.head.is_empty() {
            ckpt.network()
                .map_err(|e| Error::data(format!("checkpoint head: {e}")))?;
        }
        Ok(ckpt)
    }

    /// Writes through a temporary file and renames, so readers never see a
    /// partial checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        write_atomic(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| e.context(path.display()))
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn check_optimizer_shapes(opt: &OptimizerState, stack: &DbnStack, head: &[DenseLayer]) -> Result<()> {
    let expected = stack
        .layers
        .iter()
        .map(|l| (l.weights.as_slice().len(), l.n_hidden()))
        .chain(head.iter().map(|l| (l.weights.as_slice().len(), l.outputs())));
    let actual = opt.dbn.iter().chain(&opt.head);
    if opt.dbn.len() != stack.layers.len() || opt.head.len() != head.len() {
        return Err(Error::precondition("optimizer state does not match the network's layers"));
    }
    for ((w, b), (sw, sb)) in expected.zip(actual) {
        for (len, s) in [(w, sw), (b, sb)] {
            if s.m.len() != len || s.v.len() != len {
                return Err(Error::precondition("optimizer state has the wrong shape"));
            }
        }
    }
    Ok(())
}

fn gibbs_tag(mode: GibbsMode) -> u8 {
    match mode {
        GibbsMode::Stochastic => 0,
        GibbsMode::MeanField => 1,
    }
}

fn gibbs_from_tag(tag: u8) -> Result<GibbsMode> {
    match tag {
        0 => Ok(GibbsMode::Stochastic),
        1 => Ok(GibbsMode::MeanField),
        t => Err(Error::data(format!("unknown gibbs mode tag {t}"))),
    }
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::config(format!("{n} does not fit the checkpoint's u32 field")))
}

fn checked_mul(a: usize, b: usize) -> Result<usize> {
    a.checked_mul(b)
        .ok_or_else(|| Error::data("declared dimensions overflow"))
}

#[derive(Default)]
pub(crate) struct Writer {
    pub(crate) buf: Vec<u8>,
}

impl Writer {
    pub(crate) fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    pub(crate) fn u8(&mut self, x: u8) {
        self.buf.push(x);
    }
    pub(crate) fn u32(&mut self, x: u32) {
        self.bytes(&x.to_le_bytes());
    }
    pub(crate) fn u64(&mut self, x: u64) {
        self.bytes(&x.to_le_bytes());
    }
    pub(crate) fn f64(&mut self, x: f64) {
        self.bytes(&x.to_le_bytes());
    }
    pub(crate) fn f64s(&mut self, xs: &[f64]) {
        self.buf.reserve(xs.len() * 8);
        for x in xs {
            self.f64(*x);
        }
    }
}

pub(crate) struct Reader<'a> {
    pub(crate) bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::data(format!("truncated file: wanted {n} bytes at offset {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    /// A dimension, which must be non-zero and addressable.
    pub(crate) fn dim(&mut self) -> Result<usize> {
        let d = self.u64()?;
        match usize::try_from(d) {
            Ok(d) if d > 0 => Ok(d),
            _ => Err(Error::data(format!("invalid dimension {d}"))),
        }
    }
    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::data("length overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use adbn_core::head::build_head;
    use adbn_core::RngStream;

    fn small_stack(arch: Architecture) -> DbnStack {
        let hidden: Vec<usize> = arch.preset().iter().map(|p| p.hidden / 250).collect();
        let cd = vec![CdConfig::default(); hidden.len()];
        DbnStack::with_layout(arch, FusionMode::Gradient, 12, &hidden, cd, &RngStream::new(3)).unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = Checkpoint::pretrained(small_stack(Architecture::Alpha)).to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"EBDN");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(bytes[8], FusionMode::Gradient.tag());
        assert_eq!(bytes[9], Architecture::Alpha.tag());
        assert_eq!(u32::from_le_bytes(bytes[10..14].try_into().unwrap()), 2);
        // First layer: 12 visible, 8 hidden, gaussian.
        assert_eq!(u64::from_le_bytes(bytes[14..22].try_into().unwrap()), 12);
        assert_eq!(u64::from_le_bytes(bytes[22..30].try_into().unwrap()), 8);
        assert_eq!(bytes[30], VisibleKind::Gaussian.tag());

        // Header is 14 + 2·(8+8+1+4+8+8+4+4+1) + 4 + 1 bytes, then
        // W,b,c,σ for 12→8 and W,b,c for 8→8.
        let header = 14 + 2 * 46 + 5;
        let payload = (96 + 12 + 8 + 12) + (64 + 8 + 8);
        assert_eq!(bytes.len(), header + 8 * payload);
    }

    #[test]
    fn round_trip_with_head_and_optimizer() {
        let stack = small_stack(Architecture::Beta);
        let head = build_head(stack.top_dim(), 4, false, &RngStream::new(1)).unwrap();
        let net = Network::new(stack, head).unwrap();
        let mut opt = OptimizerState::for_network(&net);
        opt.head[1].1.t = 17;
        opt.head[1].1.m[2] = -0.25;
        let ckpt = Checkpoint::finetuned(net, Some(opt));
        let bytes = ckpt.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corrupt_files_are_data_errors() {
        let bytes = Checkpoint::pretrained(small_stack(Architecture::Rbm)).to_bytes().unwrap();
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        let mut bad_kind = bytes.clone();
        bad_kind[30] = 9;
        let mut trailing = bytes.clone();
        trailing.push(0);
        for b in [&bad_magic, &bad_kind, &trailing, &bytes[..bytes.len() - 1].to_vec()] {
            assert!(matches!(Checkpoint::from_bytes(b), Err(Error::Data(_))));
        }
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/model.ebdn");
        let ckpt = Checkpoint::pretrained(small_stack(Architecture::Zeta));
        ckpt.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ckpt);
        assert!(matches!(Checkpoint::load(&dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
