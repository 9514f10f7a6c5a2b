//! Binary field snapshots.
//!
//! A snapshot is one text line `EVNSP1 nx ny nz ncomp Lx Ly Lz\n` followed
//! by `nx·ny·nz·ncomp` little-endian `f64` values, node-major (x fastest,
//! then y, then z) with the components of a node adjacent. Lengths are
//! printed in shortest round-trip form so the grid is recovered exactly.
//!
//! A sidecar `<file>.meta` (TOML) names the components and records the
//! time, step and reference values a resumed run needs.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ScalarField, TensorField, VectorField};
use crate::grid::Grid;
use crate::model_full::{BipolarState, FullState};
use crate::model_reduced::{reconstruct_full, ReducedState};

pub const MAGIC: &str = "EVNSP1";

/// Layout of the components stored in a snapshot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnapshotKind {
    /// `rho, u(3), F(9), psi`
    Full,
    /// The full block, then `phi_def(3)`; `rho` and `F` are reconstructed.
    Reduced,
    /// The full block, the reduced `phi_def(3)`, then the reduced velocity `u_red(3)`.
    Both,
    /// The full block for the negative species, then `rho, u(3), F(9)` of
    /// the positive species; `psi` is shared.
    Bipolar,
}

const FULL: [&str; 14] =
    ["rho", "u_x", "u_y", "u_z", "F_xx", "F_xy", "F_xz", "F_yx", "F_yy", "F_yz", "F_zx", "F_zy", "F_zz", "psi"];
const PHI: [&str; 3] = ["phi_def_x", "phi_def_y", "phi_def_z"];
const U_RED: [&str; 3] = ["u_red_x", "u_red_y", "u_red_z"];

impl SnapshotKind {
    /// Ordered component names.
    pub fn manifest(self) -> Vec<String> {
        let mut m: Vec<String> = FULL.iter().map(|s| s.to_string()).collect();
        match self {
            SnapshotKind::Full => {}
            SnapshotKind::Reduced => m.extend(PHI.iter().map(|s| s.to_string())),
            SnapshotKind::Both => {
                m.extend(PHI.iter().map(|s| s.to_string()));
                m.extend(U_RED.iter().map(|s| s.to_string()));
            }
            SnapshotKind::Bipolar => m.extend(FULL[..13].iter().map(|s| format!("{s}_pos"))),
        }
        m
    }

    pub fn ncomp(self) -> usize {
        self.manifest().len()
    }
}

/// Contents of the `.meta` sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub kind: SnapshotKind,
    pub components: Vec<String>,
    pub time: f64,
    pub step: u64,
    /// Reference mean density per species, for mass drift.
    pub mass_ref: Vec<f64>,
    /// Background density actually used, when it was derived from the data.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_bar: Option<f64>,
}

/// A run state in any of the supported formulations.
#[derive(Clone, Debug, PartialEq)]
pub enum StateSnapshot {
    Full(FullState<f64>),
    Reduced(ReducedState<f64>),
    Both(FullState<f64>, ReducedState<f64>),
    Bipolar(BipolarState<f64>),
}

impl StateSnapshot {
    pub fn kind(&self) -> SnapshotKind {
        match self {
            StateSnapshot::Full(_) => SnapshotKind::Full,
            StateSnapshot::Reduced(_) => SnapshotKind::Reduced,
            StateSnapshot::Both(..) => SnapshotKind::Both,
            StateSnapshot::Bipolar(_) => SnapshotKind::Bipolar,
        }
    }

    pub fn grid(&self) -> &Grid<f64> {
        match self {
            StateSnapshot::Full(s) | StateSnapshot::Both(s, _) => s.grid(),
            StateSnapshot::Reduced(r) => r.grid(),
            StateSnapshot::Bipolar(b) => b.grid(),
        }
    }

    /// Component fields in manifest order.
    pub fn fields(&self) -> Result<Vec<ScalarField<f64>>> {
        fn full(s: &FullState<f64>) -> Vec<ScalarField<f64>> {
            let mut v = vec![s.rho.clone()];
            v.extend(s.u.c.iter().cloned());
            v.extend(s.f.c.iter().cloned());
            v.push(s.psi.clone());
            v
        }
        Ok(match self {
            StateSnapshot::Full(s) => full(s),
            StateSnapshot::Reduced(r) => {
                let mut s = reconstruct_full(r)?;
                s.psi.clone_from(&r.psi);
                let mut v = full(&s);
                v.extend(r.phi.c.iter().cloned());
                v
            }
            StateSnapshot::Both(s, r) => {
                let mut v = full(s);
                v.extend(r.phi.c.iter().cloned());
                v.extend(r.u.c.iter().cloned());
                v
            }
            StateSnapshot::Bipolar(b) => {
                let mut v = full(&b.negative);
                v.extend(full(&b.positive).into_iter().take(13));
                v
            }
        })
    }

    /// Rebuilds a state from manifest-ordered fields.
    pub fn from_fields(kind: SnapshotKind, fields: Vec<ScalarField<f64>>) -> Result<Self> {
        if fields.len() != kind.ncomp() {
            return Err(Error::Snapshot(format!("{kind:?} needs {} components, found {}", kind.ncomp(), fields.len())));
        }
        let mut it = fields.into_iter();
        let mut take = |n: usize| -> Vec<ScalarField<f64>> { it.by_ref().take(n).collect() };
        fn vector(v: Vec<ScalarField<f64>>) -> VectorField<f64> {
            let [a, b, c]: [ScalarField<f64>; 3] = v.try_into().expect("three components");
            VectorField { c: [a, b, c] }
        }
        fn tensor(v: Vec<ScalarField<f64>>) -> TensorField<f64> {
            TensorField { c: v.try_into().expect("nine components") }
        }
        let full = |take: &mut dyn FnMut(usize) -> Vec<ScalarField<f64>>, with_psi: bool| {
            let rho = take(1).remove(0);
            let u = vector(take(3));
            let f = tensor(take(9));
            let psi = if with_psi { take(1).remove(0) } else { ScalarField::zeros(&rho.grid) };
            FullState { rho, u, f, psi }
        };
        Ok(match kind {
            SnapshotKind::Full => StateSnapshot::Full(full(&mut take, true)),
            SnapshotKind::Reduced => {
                let s = full(&mut take, true);
                let phi = vector(take(3));
                StateSnapshot::Reduced(ReducedState { u: s.u, phi, psi: s.psi })
            }
            SnapshotKind::Both => {
                let s = full(&mut take, true);
                let phi = vector(take(3));
                let u = vector(take(3));
                let psi = s.psi.clone();
                StateSnapshot::Both(s, ReducedState { u, phi, psi })
            }
            SnapshotKind::Bipolar => {
                let negative = full(&mut take, true);
                let mut positive = full(&mut take, false);
                positive.psi.clone_from(&negative.psi);
                StateSnapshot::Bipolar(BipolarState { negative, positive })
            }
        })
    }
}

/// Path of the sidecar belonging to `path`.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Writes the header and interleaved values of `fields`.
pub fn write_fields(path: &Path, grid: &Grid<f64>, fields: &[ScalarField<f64>]) -> Result<()> {
    for f in fields {
        if !f.grid.same_shape(grid) {
            return Err(Error::ShapeMismatch("snapshot component on a different grid".into()));
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "{MAGIC} {} {} {} {} {:?} {:?} {:?}",
        grid.nx,
        grid.ny,
        grid.nz,
        fields.len(),
        grid.lx,
        grid.ly,
        grid.lz
    )?;
    let mut buf = Vec::with_capacity(8 * fields.len());
    for n in 0..grid.len() {
        buf.clear();
        for f in fields {
            buf.extend_from_slice(&f.data[n].to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a snapshot body: the grid and its components in stored order.
pub fn read_fields(path: &Path) -> Result<(Grid<f64>, Vec<ScalarField<f64>>)> {
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::Snapshot(format!("{}: {e}", path.display())))?);
    let mut header = Vec::new();
    r.read_until(b'\n', &mut header)?;
    let header = String::from_utf8(header).map_err(|_| Error::Snapshot("header is not text".into()))?;
    let bad = |what: &str| Error::Snapshot(format!("{}: {what} in header {:?}", path.display(), header.trim_end()));
    let tok: Vec<&str> = header.split_whitespace().collect();
    if !header.ends_with('\n') || tok.len() != 8 || tok[0] != MAGIC {
        return Err(bad("bad magic or field count"));
    }
    let dims: Vec<usize> = tok[1..5].iter().map(|t| t.parse()).collect::<std::result::Result<_, _>>().map_err(|_| bad("bad dimension"))?;
    let lens: Vec<f64> = tok[5..8].iter().map(|t| t.parse()).collect::<std::result::Result<_, _>>().map_err(|_| bad("bad length"))?;
    let grid = Grid::new(dims[0], dims[1], dims[2], lens[0], lens[1], lens[2]).map_err(|e| Error::Snapshot(e.to_string()))?;
    let ncomp = dims[3];
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    let n = grid.len();
    if body.len() != 8 * n * ncomp {
        return Err(Error::Snapshot(format!(
            "{}: expected {} data bytes, found {}",
            path.display(),
            8 * n * ncomp,
            body.len()
        )));
    }
    let mut data = vec![Vec::with_capacity(n); ncomp];
    for (m, chunk) in body.chunks_exact(8).enumerate() {
        data[m % ncomp].push(f64::from_le_bytes(chunk.try_into().expect("8 bytes")));
    }
    let fields = data.into_iter().map(|d| ScalarField::from_vec(&grid, d)).collect::<Result<_>>()?;
    Ok((grid, fields))
}

/// Writes a state and its sidecar.
pub fn write_snapshot(path: &Path, state: &StateSnapshot, meta: &SnapshotMeta) -> Result<()> {
    if meta.kind != state.kind() || meta.components != state.kind().manifest() {
        return Err(Error::Snapshot("sidecar does not describe the state".into()));
    }
    write_fields(path, state.grid(), &state.fields()?)?;
    let text = toml::to_string(meta).map_err(|e| Error::Snapshot(e.to_string()))?;
    std::fs::write(meta_path(path), text)?;
    Ok(())
}

/// Reads a state. Without a sidecar the layout is `expected` (or inferred
/// from the component count), at time zero.
pub fn read_snapshot(path: &Path, expected: Option<SnapshotKind>) -> Result<(StateSnapshot, SnapshotMeta)> {
    let (grid, fields) = read_fields(path)?;
    let mp = meta_path(path);
    let meta = if mp.exists() {
        let text = std::fs::read_to_string(&mp)?;
        let meta: SnapshotMeta = toml::from_str(&text).map_err(|e| Error::Snapshot(format!("{}: {e}", mp.display())))?;
        if meta.components != meta.kind.manifest() {
            return Err(Error::Snapshot(format!("{}: unknown component manifest", mp.display())));
        }
        meta
    } else {
        let kind = match expected {
            Some(k) => k,
            None => [SnapshotKind::Full, SnapshotKind::Reduced, SnapshotKind::Both, SnapshotKind::Bipolar]
                .into_iter()
                .find(|k| k.ncomp() == fields.len())
                .ok_or_else(|| Error::Snapshot(format!("no layout has {} components", fields.len())))?,
        };
        let species = if kind == SnapshotKind::Bipolar { 2 } else { 1 };
        SnapshotMeta { kind, components: kind.manifest(), time: 0.0, step: 0, mass_ref: vec![1.0; species], rho_bar: None }
    };
    if let Some(k) = expected {
        if k != meta.kind {
            return Err(Error::Snapshot(format!("snapshot holds a {:?} state, expected {k:?}", meta.kind)));
        }
    }
    if fields.len() != meta.components.len() {
        return Err(Error::Snapshot(format!(
            "header has {} components, manifest lists {}",
            fields.len(),
            meta.components.len()
        )));
    }
    let state = StateSnapshot::from_fields(meta.kind, fields)?;
    debug_assert!(state.grid().same_shape(&grid));
    Ok((state, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::{well_prepared_bipolar, well_prepared_init, InitParams};
    use proptest::prelude::*;

    fn grid() -> Grid<f64> {
        Grid::new(5, 3, 6, 0.7, 1.0 / 3.0, std::f64::consts::PI).unwrap()
    }

    fn meta_for(s: &StateSnapshot) -> SnapshotMeta {
        SnapshotMeta {
            kind: s.kind(),
            components: s.kind().manifest(),
            time: 0.1 + 0.2,
            step: 42,
            mass_ref: vec![1.0 + 1e-17, 0.999],
            rho_bar: Some(1.0000000000000002),
        }
    }

    #[test]
    fn manifests_have_expected_sizes() {
        assert_eq!(SnapshotKind::Full.ncomp(), 14);
        assert_eq!(SnapshotKind::Reduced.ncomp(), 17);
        assert_eq!(SnapshotKind::Both.ncomp(), 20);
        assert_eq!(SnapshotKind::Bipolar.ncomp(), 27);
    }

    #[test]
    fn header_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        let g = Grid::new(2, 1, 5, 1.0, 1.0, 2.0).unwrap();
        let a = ScalarField::from_vec(&g, (0..10).map(|v| v as f64).collect()).unwrap();
        let b = a.map(|v| -v);
        write_fields(&p, &g, &[a, b]).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let head = b"EVNSP1 2 1 5 2 1.0 1.0 2.0\n";
        assert_eq!(&bytes[..head.len()], head);
        let body = &bytes[head.len()..];
        assert_eq!(body.len(), 8 * 20);
        // node 3, second component
        assert_eq!(f64::from_le_bytes(body[8 * 7..8 * 8].try_into().unwrap()), -3.0);
    }

    #[test]
    fn states_round_trip_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let g = grid();
        let init = InitParams { amplitude: 3e-2, ..Default::default() };
        let (mut full, mut red) = well_prepared_init(&g, &init).unwrap();
        full.psi = full.rho.map(|r| (r - 1.0) * std::f64::consts::E);
        red.psi = full.psi.clone();
        let mut bip = well_prepared_bipolar(&g, &init).unwrap();
        bip.positive.psi = bip.negative.psi.clone();
        for s in [
            StateSnapshot::Full(full.clone()),
            StateSnapshot::Both(full.clone(), red.clone()),
            StateSnapshot::Reduced(red.clone()),
            StateSnapshot::Bipolar(bip),
        ] {
            let p = dir.path().join(format!("{:?}.evnsp", s.kind()));
            let meta = meta_for(&s);
            write_snapshot(&p, &s, &meta).unwrap();
            let (back, m) = read_snapshot(&p, Some(s.kind())).unwrap();
            assert_eq!(m, meta);
            assert_eq!(back.grid(), s.grid());
            assert_eq!(back, s);
        }
    }

    #[test]
    fn missing_sidecar_infers_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("eq.evnsp");
        let s = StateSnapshot::Full(FullState::equilibrium(&grid()));
        write_fields(&p, &grid(), &s.fields().unwrap()).unwrap();
        let (back, meta) = read_snapshot(&p, None).unwrap();
        assert_eq!(back, s);
        assert_eq!(meta.time, 0.0);
    }

    #[test]
    fn rejects_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.evnsp");
        let s = StateSnapshot::Full(FullState::equilibrium(&grid()));
        write_snapshot(&p, &s, &meta_for(&s)).unwrap();
        assert!(matches!(read_snapshot(&p, Some(SnapshotKind::Bipolar)), Err(Error::Snapshot(_))));

        let mut bytes = std::fs::read(&p).unwrap();
        bytes.pop();
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_snapshot(&p, None), Err(Error::Snapshot(_))));

        std::fs::write(&p, b"EVNSP2 1 1 5 1 1 1 1\n").unwrap();
        assert!(matches!(read_fields(&p), Err(Error::Snapshot(_))));
        assert!(read_fields(&dir.path().join("absent")).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn arbitrary_values_round_trip(bits in proptest::collection::vec(any::<u64>(), 5 * 2)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("r.evnsp");
            let g = Grid::new(1, 1, 5, 1.0, 1.0, 1.0).unwrap();
            let vals: Vec<f64> = bits.iter().map(|&b| f64::from_bits(b)).collect();
            let a = ScalarField::from_vec(&g, vals[..5].to_vec()).unwrap();
            let b = ScalarField::from_vec(&g, vals[5..].to_vec()).unwrap();
            write_fields(&p, &g, &[a.clone(), b.clone()]).unwrap();
            let (_, back) = read_fields(&p).unwrap();
            for (x, y) in back.iter().zip([&a, &b]) {
                let xb: Vec<u64> = x.data.iter().map(|v| v.to_bits()).collect();
                let yb: Vec<u64> = y.data.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(xb, yb);
            }
        }
    }
}
