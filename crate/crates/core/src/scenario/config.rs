//! Declarative scenario files (TOML).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actors::{AuditChecks, NotarizationMode, SelectionPolicy, SellerMutation};
use crate::crypto::sha256;
use crate::messages::{Comparator, MessageError, Predicate};
use crate::transport::TransportError;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("scenario does not parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("duplicate {role} name `{name}`")]
    DuplicateName { role: &'static str, name: String },
    #[error("{context}: unknown {role} `{name}`")]
    Unresolved {
        context: String,
        role: &'static str,
        name: String,
    },
    #[error("order {order}: schema `{schema}` is not held by any listed notary and not declared absent")]
    UnknownSchema { order: usize, schema: String },
    #[error("order {order}: upload url `{url}` is already used")]
    DuplicateUploadUrl { order: usize, url: String },
    #[error("order {order}: {reason}")]
    InvalidOrder { order: usize, reason: String },
    #[error("predicate on `{attribute}` must set exactly one comparator")]
    Predicate { attribute: String },
    #[error(transparent)]
    Message(#[from] MessageError),
    #[error("mutation {index}: {reason}")]
    Mutation { index: usize, reason: String },
    #[error("expected row {index}: {reason}")]
    Expected { index: usize, reason: String },
    #[error("notary `{0}`: sample rate must lie in [0, 1]")]
    SampleRate(String),
    #[error("network: {0}")]
    Network(#[from] TransportError),
    #[error("initial balances exceed the token supply limit")]
    Supply,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_ticks")]
    pub ticks: u64,
    #[serde(default)]
    pub network: NetworkSpec,
    #[serde(default)]
    pub timing: TimingSpec,
    #[serde(default)]
    pub notaries: Vec<NotarySpec>,
    #[serde(default)]
    pub buyers: Vec<BuyerSpec>,
    #[serde(default)]
    pub sellers: Vec<SellerSpec>,
    #[serde(default)]
    pub orders: Vec<OrderSpec>,
    #[serde(default)]
    pub mutations: Vec<MutationSpec>,
    #[serde(default)]
    pub expected: Vec<ExpectedSettlement>,
    /// Extra strings that must never appear on the ledger or in clear on
    /// the wire. Seller names, attribute values and data are always added.
    #[serde(default)]
    pub secrets: Vec<String>,
    #[serde(default)]
    pub absent_schemas: Vec<String>,
}

fn default_ticks() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    #[serde(default = "default_latency")]
    pub latency: [u64; 2],
    #[serde(default)]
    pub drop_rate: f64,
    /// Defaults to a value derived from the scenario seed.
    pub seed: Option<u64>,
}

fn default_latency() -> [u64; 2] {
    [1, 1]
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            latency: default_latency(),
            drop_rate: 0.0,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingSpec {
    pub gather_timeout: Option<u64>,
    pub delivery_timeout: Option<u64>,
    pub retry_interval: Option<u64>,
    pub max_retries: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicySpec {
    #[default]
    Always,
    Never,
    Sample(f64),
}

impl PolicySpec {
    pub fn mode(self) -> NotarizationMode {
        match self {
            PolicySpec::Always => NotarizationMode::Always,
            PolicySpec::Never => NotarizationMode::Never,
            PolicySpec::Sample(rate) => NotarizationMode::Sample { rate },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordSpec {
    pub seller: String,
    pub schema: String,
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NotarySpec {
    pub name: String,
    #[serde(default)]
    pub balance: u64,
    #[serde(default)]
    pub fee: u64,
    #[serde(default)]
    pub terms: String,
    #[serde(default)]
    pub policy: PolicySpec,
    #[serde(default = "yes")]
    pub accept_orders: bool,
    #[serde(default = "yes")]
    pub check_commitment: bool,
    #[serde(default = "yes")]
    pub check_ground_truth: bool,
    /// Sellers this notary has authenticated. Defaults to every seller.
    pub enroll: Option<Vec<String>>,
    /// Schemas copied from enrolled sellers' datasets into ground truth.
    /// Defaults to all of them.
    pub schemas: Option<Vec<String>>,
    /// Explicit records; these override copied ones.
    #[serde(default)]
    pub records: Vec<RecordSpec>,
    pub seed: Option<String>,
}

fn yes() -> bool {
    true
}

impl NotarySpec {
    pub fn new(name: impl Into<String>, fee: u64) -> Self {
        NotarySpec {
            name: name.into(),
            balance: 0,
            fee,
            terms: String::new(),
            policy: PolicySpec::Always,
            accept_orders: true,
            check_commitment: true,
            check_ground_truth: true,
            enroll: None,
            schemas: None,
            records: Vec::new(),
            seed: None,
        }
    }

    pub fn checks(&self) -> AuditChecks {
        AuditChecks {
            commitment: self.check_commitment,
            ground_truth: self.check_ground_truth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuyerSpec {
    pub name: String,
    #[serde(default)]
    pub balance: u64,
    /// Send every settled certificate to the ledger a second time.
    #[serde(default)]
    pub replay_certificates: bool,
    pub seed: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SellerSpec {
    pub name: String,
    #[serde(default)]
    pub balance: u64,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
    #[serde(default)]
    pub data: BTreeMap<String, String>,
    #[serde(default)]
    pub min_price: u64,
    pub max_notary_fee: Option<u64>,
    pub trusted_notaries: Option<Vec<String>>,
    pub accepted_terms: Option<Vec<String>>,
    pub seed: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredicateSpec {
    pub attribute: String,
    pub eq: Option<String>,
    pub ne: Option<String>,
    pub ge: Option<i64>,
    pub le: Option<i64>,
    #[serde(rename = "in")]
    pub any_of: Option<Vec<String>>,
}

impl PredicateSpec {
    pub fn to_predicate(&self) -> Result<Predicate, ScenarioError> {
        let mut set = Vec::new();
        if let Some(v) = &self.eq {
            set.push(Comparator::Eq(v.clone()));
        }
        if let Some(v) = &self.ne {
            set.push(Comparator::Ne(v.clone()));
        }
        if let Some(n) = self.ge {
            set.push(Comparator::Ge(n));
        }
        if let Some(n) = self.le {
            set.push(Comparator::Le(n));
        }
        if let Some(vs) = &self.any_of {
            set.push(Comparator::In(vs.iter().cloned().collect()));
        }
        if set.len() != 1 {
            return Err(ScenarioError::Predicate {
                attribute: self.attribute.clone(),
            });
        }
        Ok(Predicate::new(self.attribute.clone(), set.remove(0))?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionSpec {
    #[default]
    All,
    First(usize),
    Budget(u64),
}

impl From<SelectionSpec> for SelectionPolicy {
    fn from(s: SelectionSpec) -> Self {
        match s {
            SelectionSpec::All => SelectionPolicy::AllValid,
            SelectionSpec::First(k) => SelectionPolicy::FirstK(k),
            SelectionSpec::Budget(b) => SelectionPolicy::BudgetCap(b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderSpec {
    pub buyer: String,
    pub schema: String,
    #[serde(default)]
    pub fields: Vec<String>,
    #[serde(default)]
    pub audience: Vec<PredicateSpec>,
    pub upload_url: String,
    pub price: u64,
    #[serde(default)]
    pub min_audit_budget: i64,
    #[serde(default)]
    pub terms: String,
    pub notaries: Vec<String>,
    #[serde(default)]
    pub selection: SelectionSpec,
    #[serde(default)]
    pub audit_topup: u64,
    /// Sellers whose responses the buyer always sends to audit.
    #[serde(default)]
    pub force_audit: Vec<String>,
    #[serde(default = "default_post_at")]
    pub post_at: u64,
    #[serde(default = "default_collect")]
    pub collect_ticks: u64,
}

fn default_post_at() -> u64 {
    1
}

fn default_collect() -> u64 {
    12
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MutationKind {
    SubstituteData,
    FlipBit,
    WrongNotary,
    PriceMismatch,
    ForgedCertificate,
    CertificateReplay,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MutationSpec {
    pub kind: MutationKind,
    /// Target seller; all kinds except certificate replay.
    pub seller: Option<String>,
    /// Target buyer; certificate replay only.
    pub buyer: Option<String>,
    #[serde(default)]
    pub bit: usize,
}

impl MutationSpec {
    pub fn seller_mutation(&self) -> Option<SellerMutation> {
        Some(match self.kind {
            MutationKind::SubstituteData => SellerMutation::SubstituteData,
            MutationKind::FlipBit => SellerMutation::FlipBit { bit: self.bit },
            MutationKind::WrongNotary => SellerMutation::WrongNotary,
            MutationKind::PriceMismatch => SellerMutation::PriceMismatch,
            MutationKind::ForgedCertificate => SellerMutation::ForgedCertificate,
            MutationKind::CertificateReplay => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedSettlement {
    /// Index into `orders`.
    #[serde(default)]
    pub order: usize,
    pub seller: String,
    /// `a`, `b` or `c`.
    pub verdict: String,
    /// `seller-paid` or `buyer-refunded`.
    pub outcome: String,
    pub amount: u64,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Seed material for an actor: explicit when given, else derived from
    /// the scenario seed, the role and the name.
    pub fn actor_seed(&self, seed: u64, role: &str, name: &str, explicit: Option<&str>) -> [u8; 32] {
        let mut buf = Vec::new();
        match explicit {
            Some(s) => {
                buf.extend_from_slice(b"datamarket/actor-seed/explicit");
                buf.extend_from_slice(s.as_bytes());
            }
            None => {
                buf.extend_from_slice(b"datamarket/actor-seed/v1");
                buf.extend_from_slice(&seed.to_be_bytes());
            }
        }
        buf.push(0);
        buf.extend_from_slice(role.as_bytes());
        buf.push(0);
        buf.extend_from_slice(name.as_bytes());
        sha256(&buf).0
    }

    /// Every string that must stay off the ledger.
    pub fn secret_values(&self) -> BTreeSet<Vec<u8>> {
        let mut out = BTreeSet::new();
        for s in &self.sellers {
            out.insert(s.name.as_bytes().to_vec());
            out.extend(s.attributes.values().map(|v| v.as_bytes().to_vec()));
            out.extend(s.data.values().map(|v| v.as_bytes().to_vec()));
        }
        out.extend(self.secrets.iter().map(|s| s.as_bytes().to_vec()));
        out
    }

    /// Checks that every cross-reference resolves.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        unique("notary", self.notaries.iter().map(|n| &n.name))?;
        unique("buyer", self.buyers.iter().map(|n| &n.name))?;
        unique("seller", self.sellers.iter().map(|n| &n.name))?;
        let sellers: BTreeSet<&str> = self.sellers.iter().map(|s| s.name.as_str()).collect();
        let notaries: BTreeSet<&str> = self.notaries.iter().map(|s| s.name.as_str()).collect();
        let buyers: BTreeSet<&str> = self.buyers.iter().map(|s| s.name.as_str()).collect();
        let need = |set: &BTreeSet<&str>, role, name: &str, context: String| {
            if set.contains(name) {
                Ok(())
            } else {
                Err(ScenarioError::Unresolved {
                    context,
                    role,
                    name: name.to_string(),
                })
            }
        };

        for n in &self.notaries {
            let ctx = || format!("notary `{}`", n.name);
            for s in n.enroll.iter().flatten() {
                need(&sellers, "seller", s, ctx())?;
            }
            for r in &n.records {
                need(&sellers, "seller", &r.seller, ctx())?;
            }
            if let PolicySpec::Sample(rate) = n.policy {
                if !(0.0..=1.0).contains(&rate) {
                    return Err(ScenarioError::SampleRate(n.name.clone()));
                }
            }
        }
        for s in &self.sellers {
            for t in s.trusted_notaries.iter().flatten() {
                need(&notaries, "notary", t, format!("seller `{}`", s.name))?;
            }
        }

        let mut urls = BTreeSet::new();
        for (i, o) in self.orders.iter().enumerate() {
            let ctx = || format!("order {i}");
            need(&buyers, "buyer", &o.buyer, ctx())?;
            for n in &o.notaries {
                need(&notaries, "notary", n, ctx())?;
            }
            for s in &o.force_audit {
                need(&sellers, "seller", s, ctx())?;
            }
            if o.notaries.is_empty() {
                return Err(ScenarioError::InvalidOrder {
                    order: i,
                    reason: "notary list is empty".into(),
                });
            }
            if o.price == 0 {
                return Err(ScenarioError::InvalidOrder {
                    order: i,
                    reason: "price must be positive".into(),
                });
            }
            if o.upload_url.is_empty() || o.upload_url.starts_with("actor:") {
                return Err(ScenarioError::InvalidOrder {
                    order: i,
                    reason: format!("upload url `{}` is not usable", o.upload_url),
                });
            }
            if !urls.insert(o.upload_url.as_str()) {
                return Err(ScenarioError::DuplicateUploadUrl {
                    order: i,
                    url: o.upload_url.clone(),
                });
            }
            for p in &o.audience {
                p.to_predicate()?;
            }
            let held = o.notaries.iter().any(|n| {
                let spec = self.notaries.iter().find(|x| &x.name == n).expect("resolved");
                self.ground_truth_for(spec).keys().any(|(_, schema)| *schema == o.schema)
            });
            if !held && !self.absent_schemas.contains(&o.schema) {
                return Err(ScenarioError::UnknownSchema {
                    order: i,
                    schema: o.schema.clone(),
                });
            }
        }

        for (i, m) in self.mutations.iter().enumerate() {
            let err = |reason: &str| ScenarioError::Mutation {
                index: i,
                reason: reason.to_string(),
            };
            match (m.kind, &m.seller, &m.buyer) {
                (MutationKind::CertificateReplay, None, Some(b)) => {
                    need(&buyers, "buyer", b, format!("mutation {i}"))?
                }
                (MutationKind::CertificateReplay, _, _) => {
                    return Err(err("certificate-replay needs `buyer` and no `seller`"))
                }
                (_, Some(s), None) => need(&sellers, "seller", s, format!("mutation {i}"))?,
                _ => return Err(err("seller mutations need `seller` and no `buyer`")),
            }
            if m.kind == MutationKind::FlipBit {
                let s = self.sellers.iter().find(|s| Some(&s.name) == m.seller.as_ref());
                if s.is_some_and(|s| s.data.values().any(String::is_empty)) {
                    return Err(err("cannot flip a bit of empty data"));
                }
            }
        }
        let mut targeted = BTreeSet::new();
        for (i, m) in self.mutations.iter().enumerate() {
            if let Some(s) = &m.seller {
                if !targeted.insert(s) {
                    return Err(ScenarioError::Mutation {
                        index: i,
                        reason: format!("seller `{s}` already has a mutation"),
                    });
                }
            }
        }

        for (i, e) in self.expected.iter().enumerate() {
            let err = |reason: String| ScenarioError::Expected { index: i, reason };
            if e.order >= self.orders.len() {
                return Err(err(format!("order {} does not exist", e.order)));
            }
            need(&sellers, "seller", &e.seller, format!("expected row {i}"))?;
            if !["a", "b", "c"].contains(&e.verdict.as_str()) {
                return Err(err(format!("verdict `{}` is not a, b or c", e.verdict)));
            }
            if !["seller-paid", "buyer-refunded"].contains(&e.outcome.as_str()) {
                return Err(err(format!("outcome `{}` is unknown", e.outcome)));
            }
        }

        let total = self
            .notaries
            .iter()
            .map(|n| n.balance as u128)
            .chain(self.buyers.iter().map(|b| b.balance as u128))
            .chain(self.sellers.iter().map(|s| s.balance as u128))
            .sum::<u128>();
        if total > u64::MAX as u128 {
            return Err(ScenarioError::Supply);
        }
        Ok(())
    }

    /// Resolved ground-truth records of one notary: (seller, schema) -> data.
    pub fn ground_truth_for(&self, notary: &NotarySpec) -> BTreeMap<(String, String), Vec<u8>> {
        let mut out = BTreeMap::new();
        for s in &self.sellers {
            if notary.enroll.as_ref().is_some_and(|e| !e.contains(&s.name)) {
                continue;
            }
            for (schema, data) in &s.data {
                if notary.schemas.as_ref().is_none_or(|k| k.contains(schema)) {
                    out.insert((s.name.clone(), schema.clone()), data.as_bytes().to_vec());
                }
            }
        }
        for r in &notary.records {
            out.insert((r.seller.clone(), r.schema.clone()), r.data.as_bytes().to_vec());
        }
        out
    }
}

fn unique<'a>(role: &'static str, names: impl Iterator<Item = &'a String>) -> Result<(), ScenarioError> {
    let mut seen = BTreeSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(ScenarioError::DuplicateName {
                role,
                name: n.clone(),
            });
        }
    }
    Ok(())
}
