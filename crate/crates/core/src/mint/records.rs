//! Records the mint keeps in its stores, in the wire codec's encoding.

use crate::amount::Amount;
use crate::clock::Timestamp;
use crate::wire::{
    Body, DenomId, Hash32, MerchantAccount, Reader, RefreshCommitment, Uint, WireError, Writer,
};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SpendEntry {
    Deposit {
        contract_hash: Hash32,
        merchant: MerchantAccount,
        amount: Amount,
        timestamp: Timestamp,
    },
    /// Value reserved by a refresh session (target value plus fee).
    Refresh {
        session_id: Hash32,
        amount: Amount,
        timestamp: Timestamp,
    },
    Refund {
        bank_id: String,
        amount: Amount,
        timestamp: Timestamp,
    },
}

impl SpendEntry {
    pub fn amount(&self) -> Amount {
        match self {
            SpendEntry::Deposit { amount, .. }
            | SpendEntry::Refresh { amount, .. }
            | SpendEntry::Refund { amount, .. } => *amount,
        }
    }
}

impl Body for SpendEntry {
    fn write(&self, w: &mut Writer) {
        match self {
            SpendEntry::Deposit {
                contract_hash,
                merchant,
                amount,
                timestamp,
            } => {
                w.u8(0).fixed(contract_hash);
                merchant.write(w);
                w.amount(*amount).u64(*timestamp);
            }
            SpendEntry::Refresh {
                session_id,
                amount,
                timestamp,
            } => {
                w.u8(1).fixed(session_id).amount(*amount).u64(*timestamp);
            }
            SpendEntry::Refund {
                bank_id,
                amount,
                timestamp,
            } => {
                w.u8(2).str(bank_id).amount(*amount).u64(*timestamp);
            }
        }
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        match r.u8()? {
            0 => Ok(SpendEntry::Deposit {
                contract_hash: r.hash()?,
                merchant: MerchantAccount::read(r)?,
                amount: r.amount()?,
                timestamp: r.u64()?,
            }),
            1 => Ok(SpendEntry::Refresh {
                session_id: r.hash()?,
                amount: r.amount()?,
                timestamp: r.u64()?,
            }),
            2 => Ok(SpendEntry::Refund {
                bank_id: r.str()?,
                amount: r.amount()?,
                timestamp: r.u64()?,
            }),
            _ => Err(WireError::Malformed("spend entry tag")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SessionState {
    Committed,
    Forfeited,
    Completed,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RefreshSessionRecord {
    pub session_id: Hash32,
    pub target_denom_id: DenomId,
    pub reserved: Amount,
    /// Residual left on the old coin once this session's reservation is made.
    pub residual_after: Amount,
    pub commitments: Vec<RefreshCommitment>,
    /// 1-based.
    pub gamma: u8,
    pub state: SessionState,
    /// Hash of the reveal that moved the session out of `Committed`.
    pub reveal_digest: Option<Hash32>,
    pub change_blind_sig: Option<Uint>,
}

impl Body for RefreshSessionRecord {
    fn write(&self, w: &mut Writer) {
        w.fixed(&self.session_id)
            .fixed(&self.target_denom_id.0)
            .amount(self.reserved)
            .amount(self.residual_after);
        w.count(self.commitments.len());
        for c in &self.commitments {
            c.write(w);
        }
        w.u8(self.gamma).u8(match self.state {
            SessionState::Committed => 0,
            SessionState::Forfeited => 1,
            SessionState::Completed => 2,
        });
        match &self.reveal_digest {
            Some(d) => w.u8(1).fixed(d),
            None => w.u8(0),
        };
        match &self.change_blind_sig {
            Some(s) => w.u8(1).uint(s),
            None => w.u8(0),
        };
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let session_id = r.hash()?;
        let target_denom_id = DenomId(r.hash()?);
        let reserved = r.amount()?;
        let residual_after = r.amount()?;
        let n = r.count()?;
        let commitments = (0..n)
            .map(|_| RefreshCommitment::read(r))
            .collect::<Result<_, _>>()?;
        let gamma = r.u8()?;
        let state = match r.u8()? {
            0 => SessionState::Committed,
            1 => SessionState::Forfeited,
            2 => SessionState::Completed,
            _ => return Err(WireError::Malformed("session state")),
        };
        let reveal_digest = match r.u8()? {
            0 => None,
            1 => Some(r.hash()?),
            _ => return Err(WireError::Malformed("option tag")),
        };
        let change_blind_sig = match r.u8()? {
            0 => None,
            1 => Some(r.uint()?),
            _ => return Err(WireError::Malformed("option tag")),
        };
        Ok(RefreshSessionRecord {
            session_id,
            target_denom_id,
            reserved,
            residual_after,
            commitments,
            gamma,
            state,
            reveal_digest,
            change_blind_sig,
        })
    }
}

/// Per-coin ledger, keyed by the coin's public key bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpentRecord {
    pub denom_id: DenomId,
    pub spent_total: Amount,
    pub entries: Vec<SpendEntry>,
    pub sessions: Vec<RefreshSessionRecord>,
}

impl SpentRecord {
    pub fn new(denom_id: DenomId) -> Self {
        SpentRecord {
            denom_id,
            spent_total: Amount::ZERO,
            entries: Vec::new(),
            sessions: Vec::new(),
        }
    }

    pub fn session(&self, id: &Hash32) -> Option<&RefreshSessionRecord> {
        self.sessions.iter().find(|s| &s.session_id == id)
    }

    pub fn session_mut(&mut self, id: &Hash32) -> Option<&mut RefreshSessionRecord> {
        self.sessions.iter_mut().find(|s| &s.session_id == id)
    }

    /// Appends an entry if it fits under `cap`.
    pub fn try_add(&mut self, entry: SpendEntry, cap: Amount) -> bool {
        match self.spent_total.checked_add(entry.amount()) {
            Some(total) if total <= cap => {
                self.spent_total = total;
                self.entries.push(entry);
                true
            }
            _ => false,
        }
    }
}

impl Body for SpentRecord {
    fn write(&self, w: &mut Writer) {
        w.fixed(&self.denom_id.0)
            .amount(self.spent_total)
            .count(self.entries.len());
        for e in &self.entries {
            e.write(w);
        }
        w.count(self.sessions.len());
        for s in &self.sessions {
            s.write(w);
        }
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let denom_id = DenomId(r.hash()?);
        let spent_total = r.amount()?;
        let n = r.count()?;
        let entries = (0..n)
            .map(|_| SpendEntry::read(r))
            .collect::<Result<_, _>>()?;
        let m = r.count()?;
        let sessions = (0..m)
            .map(|_| RefreshSessionRecord::read(r))
            .collect::<Result<_, _>>()?;
        Ok(SpentRecord {
            denom_id,
            spent_total,
            entries,
            sessions,
        })
    }
}

/// A blind signature the mint issued, keyed by the hash of the blinded value.
/// `bank_id` is empty for change coins issued by refresh.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WithdrawalRecord {
    pub denom_id: DenomId,
    pub bank_id: String,
    pub timestamp: Timestamp,
    pub blind_sig: Uint,
}

impl WithdrawalRecord {
    pub fn from_refresh(&self) -> bool {
        self.bank_id.is_empty()
    }
}

impl Body for WithdrawalRecord {
    fn write(&self, w: &mut Writer) {
        w.fixed(&self.denom_id.0)
            .str(&self.bank_id)
            .u64(self.timestamp)
            .uint(&self.blind_sig);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(WithdrawalRecord {
            denom_id: DenomId(r.hash()?),
            bank_id: r.str()?,
            timestamp: r.u64()?,
            blind_sig: r.uint()?,
        })
    }
}
