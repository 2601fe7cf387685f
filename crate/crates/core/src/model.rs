//! System parameters and Hamiltonian construction for the spin and harmonic
//! chains with their two ancillas.
//!
//! Conventions used throughout the crate: ħ = 1, unit masses, Pauli matrices
//! (not spin-1/2 operators) for the spin model. Site indices in every public
//! interface are 1-based. Internally the degrees of freedom are ordered as
//! (chain 1..N, S, R), i.e. chain site `i` has index `i - 1`, the sender has
//! index `N` and the receiver index `N + 1`.

use nalgebra::DMatrix;

use crate::config::{format_f64, KeyValues};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Open,
    Periodic,
}

impl Boundary {
    pub fn as_str(self) -> &'static str {
        match self {
            Boundary::Open => "open",
            Boundary::Periodic => "periodic",
        }
    }

    fn parse(key: &str, raw: &str) -> Result<Self> {
        match raw {
            "open" => Ok(Boundary::Open),
            "periodic" => Ok(Boundary::Periodic),
            other => Err(Error::ConfigKey {
                key: key.into(),
                msg: format!("unknown boundary `{other}`"),
            }),
        }
    }
}

/// A degree of freedom of the extended system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Site {
    /// Chain site, 1-based.
    Chain(usize),
    Sender,
    Receiver,
}

impl Site {
    /// Position in the (chain 1..N, S, R) ordering.
    pub fn index(self, n_sites: usize) -> usize {
        match self {
            Site::Chain(i) => i - 1,
            Site::Sender => n_sites,
            Site::Receiver => n_sites + 1,
        }
    }
}

/// Parameters of the spin chain (open boundary) plus sender and receiver spins.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinSystemConfig<T> {
    pub n_sites: usize,
    pub b_field: T,
    pub j_x: T,
    pub j_y: T,
    pub j_z: T,
    pub b_ancilla: T,
    pub j_ancilla: T,
    pub m_sender: usize,
    pub m_receiver: usize,
    pub boundary: Boundary,
    /// Permit coupling sites outside the central half of the chain.
    pub allow_off_centre: bool,
}

impl<T: Real> SpinSystemConfig<T> {
    /// Chain of `n_sites` with the ancillas attached around the centre; all
    /// couplings zero.
    pub fn centred(n_sites: usize) -> Self {
        let mid = n_sites / 2;
        Self {
            n_sites,
            b_field: T::one(),
            j_x: T::zero(),
            j_y: T::zero(),
            j_z: T::zero(),
            b_ancilla: T::zero(),
            j_ancilla: T::zero(),
            m_sender: mid.max(1),
            m_receiver: (mid + 1).min(n_sites.max(2)),
            boundary: Boundary::Open,
            allow_off_centre: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_sites;
        if n == 0 {
            return Err(Error::InvalidConfig("n_sites must be positive".into()));
        }
        if self.boundary != Boundary::Open {
            return Err(Error::InvalidConfig(
                "the spin chain supports open boundary conditions only".into(),
            ));
        }
        let (s, r) = (self.m_sender, self.m_receiver);
        if !(1 <= s && s < r && r <= n) {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= m_sender < m_receiver <= n_sites, got m_sender = {s}, m_receiver = {r}, n_sites = {n}"
            )));
        }
        if !self.allow_off_centre {
            // strictly inside [N/4, 3N/4]
            let inside = |m: usize| 4 * m > n && 4 * m < 3 * n;
            if !inside(s) || !inside(r) {
                return Err(Error::InvalidConfig(format!(
                    "coupling sites {s}, {r} not strictly inside [N/4, 3N/4] for N = {n}; set allow_off_centre to override"
                )));
            }
        }
        for (name, v) in [
            ("b_field", self.b_field),
            ("j_x", self.j_x),
            ("j_y", self.j_y),
            ("j_z", self.j_z),
            ("b_ancilla", self.b_ancilla),
            ("j_ancilla", self.j_ancilla),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} is not finite")));
            }
        }
        if self.b_ancilla < T::zero() || self.j_ancilla < T::zero() {
            return Err(Error::InvalidConfig(
                "b_ancilla and j_ancilla must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Weak-coupling warnings; empty when `J_a` is small against the chain scales.
    pub fn warnings(&self) -> Vec<String> {
        let jmax = self.j_x.abs().max(self.j_y.abs()).max(self.j_z.abs());
        let scale = self.b_field.abs().min(jmax);
        let mut out = Vec::new();
        if self.j_ancilla > T::zero() && self.j_ancilla >= T::c(0.2) * scale {
            out.push(format!(
                "j_ancilla = {} is not small against min(|B|, max|J|) = {}; weak-coupling picture may not apply",
                self.j_ancilla, scale
            ));
        }
        out
    }

    /// Largest single coupling constant; sets the default Trotter step.
    pub fn max_coupling(&self) -> T {
        [
            self.b_field,
            self.j_x,
            self.j_y,
            self.j_z,
            self.b_ancilla,
            self.j_ancilla,
        ]
        .into_iter()
        .fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Same parameters without the ancillas' coupling.
    pub fn decoupled(&self) -> Self {
        Self {
            j_ancilla: T::zero(),
            ..self.clone()
        }
    }

    pub const KEYS: [&'static str; 11] = [
        "n_sites",
        "b_field",
        "j_x",
        "j_y",
        "j_z",
        "b_ancilla",
        "j_ancilla",
        "m_sender",
        "m_receiver",
        "boundary",
        "allow_off_centre",
    ];

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let real = |k: &str| -> Result<T> { Ok(T::c(kv.require::<f64>(k)?)) };
        let real_or = |k: &str| -> Result<T> { Ok(T::c(kv.get_or::<f64>(k, 0.0)?)) };
        let cfg = Self {
            n_sites: kv.require("n_sites")?,
            b_field: real("b_field")?,
            j_x: real_or("j_x")?,
            j_y: real_or("j_y")?,
            j_z: real_or("j_z")?,
            b_ancilla: real("b_ancilla")?,
            j_ancilla: real("j_ancilla")?,
            m_sender: kv.require("m_sender")?,
            m_receiver: kv.require("m_receiver")?,
            boundary: match kv.raw("boundary") {
                Some(raw) => Boundary::parse("boundary", raw)?,
                None => Boundary::Open,
            },
            allow_off_centre: kv.get_or("allow_off_centre", false)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.insert("n_sites", self.n_sites);
        kv.insert("b_field", format_f64(self.b_field.as_f64()));
        kv.insert("j_x", format_f64(self.j_x.as_f64()));
        kv.insert("j_y", format_f64(self.j_y.as_f64()));
        kv.insert("j_z", format_f64(self.j_z.as_f64()));
        kv.insert("b_ancilla", format_f64(self.b_ancilla.as_f64()));
        kv.insert("j_ancilla", format_f64(self.j_ancilla.as_f64()));
        kv.insert("m_sender", self.m_sender);
        kv.insert("m_receiver", self.m_receiver);
        kv.insert("boundary", self.boundary.as_str());
        kv.insert("allow_off_centre", self.allow_off_centre);
        kv
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pauli {
    X,
    Y,
    Z,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldTerm<T> {
    pub site: Site,
    pub pauli: Pauli,
    pub coeff: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BondTerm<T> {
    pub sites: (Site, Site),
    pub paulis: (Pauli, Pauli),
    pub coeff: T,
}

/// Local decomposition of the full spin Hamiltonian.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinTerms<T> {
    pub n_sites: usize,
    pub fields: Vec<FieldTerm<T>>,
    pub bonds: Vec<BondTerm<T>>,
}

impl<T: Real> SpinTerms<T> {
    /// Terms acting only on chain sites.
    pub fn chain_only(&self) -> SpinTerms<T> {
        let on_chain = |s: &Site| matches!(s, Site::Chain(_));
        SpinTerms {
            n_sites: self.n_sites,
            fields: self
                .fields
                .iter()
                .filter(|f| on_chain(&f.site))
                .cloned()
                .collect(),
            bonds: self
                .bonds
                .iter()
                .filter(|b| on_chain(&b.sites.0) && on_chain(&b.sites.1))
                .cloned()
                .collect(),
        }
    }
}

/// Field, chain-bond and ancilla terms of the spin Hamiltonian. Terms with a
/// zero coefficient are omitted.
pub fn build_spin_terms<T: Real>(config: &SpinSystemConfig<T>) -> Result<SpinTerms<T>> {
    config.validate()?;
    for w in config.warnings() {
        log::warn!("{w}");
    }
    let n = config.n_sites;
    let mut fields = Vec::with_capacity(n + 2);
    let mut bonds = Vec::with_capacity(3 * n + 2);
    if config.b_field != T::zero() {
        for i in 1..=n {
            fields.push(FieldTerm {
                site: Site::Chain(i),
                pauli: Pauli::Z,
                coeff: config.b_field,
            });
        }
    }
    for i in 1..n {
        for (pauli, coeff) in [
            (Pauli::X, config.j_x),
            (Pauli::Y, config.j_y),
            (Pauli::Z, config.j_z),
        ] {
            if coeff != T::zero() {
                bonds.push(BondTerm {
                    sites: (Site::Chain(i), Site::Chain(i + 1)),
                    paulis: (pauli, pauli),
                    coeff,
                });
            }
        }
    }
    if config.b_ancilla != T::zero() {
        for site in [Site::Sender, Site::Receiver] {
            fields.push(FieldTerm {
                site,
                pauli: Pauli::Z,
                coeff: config.b_ancilla,
            });
        }
    }
    if config.j_ancilla != T::zero() {
        for (anc, m) in [
            (Site::Sender, config.m_sender),
            (Site::Receiver, config.m_receiver),
        ] {
            bonds.push(BondTerm {
                sites: (Site::Chain(m), anc),
                paulis: (Pauli::X, Pauli::X),
                coeff: config.j_ancilla,
            });
        }
    }
    Ok(SpinTerms {
        n_sites: n,
        fields,
        bonds,
    })
}

/// Parameters of the periodic harmonic chain plus sender and receiver oscillators.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicSystemConfig<T> {
    pub n_sites: usize,
    /// Nearest-neighbour spring frequency Ω.
    pub omega_coupling: T,
    /// On-site frequency Ω₀, the spectral gap of the infinite chain.
    pub omega_onsite: T,
    /// Ancilla frequency ω.
    pub omega_ancilla: T,
    pub j_ancilla: T,
    pub m_sender: usize,
    pub m_receiver: usize,
    pub boundary: Boundary,
}

impl<T: Real> HarmonicSystemConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let n = self.n_sites;
        if n == 0 {
            return Err(Error::InvalidConfig("n_sites must be positive".into()));
        }
        if self.boundary != Boundary::Periodic {
            return Err(Error::InvalidConfig(
                "the harmonic chain supports periodic boundary conditions only".into(),
            ));
        }
        for (name, m) in [("m_sender", self.m_sender), ("m_receiver", self.m_receiver)] {
            if m == 0 || m > n {
                return Err(Error::InvalidConfig(format!(
                    "{name} = {m} outside [1, {n}]"
                )));
            }
        }
        for (name, v) in [
            ("omega_coupling", self.omega_coupling),
            ("omega_onsite", self.omega_onsite),
            ("omega_ancilla", self.omega_ancilla),
            ("j_ancilla", self.j_ancilla),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} is not finite")));
            }
        }
        if self.omega_coupling <= T::zero() {
            return Err(Error::InvalidConfig("omega_coupling must be positive".into()));
        }
        if self.omega_onsite < T::zero() || self.omega_ancilla < T::zero() {
            return Err(Error::InvalidConfig(
                "omega_onsite and omega_ancilla must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Site separation |m_S − m_R| used by the infinite-chain kernel.
    pub fn separation(&self) -> usize {
        self.m_sender.abs_diff(self.m_receiver)
    }

    /// Whether the ancilla frequency lies inside the chain band (ω ≥ Ω₀).
    pub fn is_resonant(&self) -> bool {
        self.omega_ancilla >= self.omega_onsite
    }

    /// Time after which the finite ring's emitted wave packets return to the
    /// ancillas, N/(2Ω). In the off-resonant regime nothing propagates at the
    /// ancilla frequency and the ring shows no revival, so this is infinite.
    pub fn revival_time(&self) -> T {
        if self.is_resonant() {
            T::from_count(self.n_sites) / (T::c(2.0) * self.omega_coupling)
        } else {
            T::max_value().unwrap_or(T::c(f64::MAX))
        }
    }

    pub const KEYS: [&'static str; 8] = [
        "n_sites",
        "omega_coupling",
        "omega_onsite",
        "omega_ancilla",
        "j_ancilla",
        "m_sender",
        "m_receiver",
        "boundary",
    ];

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let real = |k: &str| -> Result<T> { Ok(T::c(kv.require::<f64>(k)?)) };
        let cfg = Self {
            n_sites: kv.require("n_sites")?,
            omega_coupling: real("omega_coupling")?,
            omega_onsite: real("omega_onsite")?,
            omega_ancilla: real("omega_ancilla")?,
            j_ancilla: real("j_ancilla")?,
            m_sender: kv.require("m_sender")?,
            m_receiver: kv.require("m_receiver")?,
            boundary: match kv.raw("boundary") {
                Some(raw) => Boundary::parse("boundary", raw)?,
                None => Boundary::Periodic,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.insert("n_sites", self.n_sites);
        kv.insert("omega_coupling", format_f64(self.omega_coupling.as_f64()));
        kv.insert("omega_onsite", format_f64(self.omega_onsite.as_f64()));
        kv.insert("omega_ancilla", format_f64(self.omega_ancilla.as_f64()));
        kv.insert("j_ancilla", format_f64(self.j_ancilla.as_f64()));
        kv.insert("m_sender", self.m_sender);
        kv.insert("m_receiver", self.m_receiver);
        kv.insert("boundary", self.boundary.as_str());
        kv
    }
}

/// Potential matrix V of H = ½ pᵀp + ½ qᵀVq over the M = N + 2 modes in
/// (chain 1..N, S, R) order.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm<T: Real> {
    pub n_sites: usize,
    pub v: DMatrix<T>,
}

impl<T: Real> QuadraticForm<T> {
    pub fn dimension(&self) -> usize {
        self.v.nrows()
    }

    pub fn chain_block(&self) -> DMatrix<T> {
        self.v.view((0, 0), (self.n_sites, self.n_sites)).into_owned()
    }

    pub fn sender(&self) -> usize {
        self.n_sites
    }

    pub fn receiver(&self) -> usize {
        self.n_sites + 1
    }

    pub fn min_eigenvalue(&self) -> T {
        self.v.clone().symmetric_eigenvalues().min()
    }
}

/// Builds V and rejects forms with a negative direction (Hamiltonian unbounded
/// below). Marginal zero modes, e.g. the uniform mode of a chain with Ω₀ = 0
/// and decoupled ancillas, are accepted here.
pub fn build_quadratic_form<T: Real>(config: &HarmonicSystemConfig<T>) -> Result<QuadraticForm<T>> {
    config.validate()?;
    let n = config.n_sites;
    let m = n + 2;
    let w2 = config.omega_coupling * config.omega_coupling;
    let mut v = DMatrix::<T>::zeros(m, m);
    for j in 0..n {
        let k = (j + 1) % n;
        // Ω²(q_j − q_{j+1})², accumulated so that N = 1, 2 rings come out right
        v[(j, j)] += w2;
        v[(k, k)] += w2;
        v[(j, k)] -= w2;
        v[(k, j)] -= w2;
        v[(j, j)] += config.omega_onsite * config.omega_onsite;
    }
    let (s, r) = (n, n + 1);
    let wa2 = config.omega_ancilla * config.omega_ancilla;
    v[(s, s)] = wa2;
    v[(r, r)] = wa2;
    let (ms, mr) = (config.m_sender - 1, config.m_receiver - 1);
    v[(s, ms)] += config.j_ancilla;
    v[(ms, s)] += config.j_ancilla;
    v[(r, mr)] += config.j_ancilla;
    v[(mr, r)] += config.j_ancilla;

    let form = QuadraticForm { n_sites: n, v };
    let min = form.min_eigenvalue();
    let scale = form.v.amax().max(T::one());
    if min < -T::c(1e-12) * scale {
        return Err(Error::UnstableHamiltonian {
            min_eigenvalue: min.as_f64(),
        });
    }
    Ok(form)
}

/// ω_k = sqrt(4Ω² sin²(k/2) + Ω₀²).
pub fn dispersion<T: Real>(k: T, omega_coupling: T, omega_onsite: T) -> T {
    let s = (k / T::c(2.0)).sin();
    (T::c(4.0) * omega_coupling * omega_coupling * s * s + omega_onsite * omega_onsite).sqrt()
}

/// Upper band edge sqrt(4Ω² + Ω₀²).
pub fn band_top<T: Real>(omega_coupling: T, omega_onsite: T) -> T {
    (T::c(4.0) * omega_coupling * omega_coupling + omega_onsite * omega_onsite).sqrt()
}
