//! Service interfaces. The mint and gateways implement these directly; a
//! transport can implement them as clients that encode requests on the wire.

use crate::gateway::{Gateway, GatewayError};
use crate::mint::{Mint, MintError};
use crate::wire::{
    AuditReport, CustomerRefundRequest, CustomerWithdrawRequest, DenomId, DepositConfirmation,
    DepositForwardRequest, DepositRequest, KeysDocument, LinkRequest, LinkResponse,
    RefreshChallenge, RefreshCommitRequest, RefreshRevealRequest, RefreshRevealResponse,
    RefundRequest, RefundResponse, WithdrawRequest, WithdrawResponse,
};

pub trait MintApi: Send + Sync {
    fn keys(&self) -> Result<KeysDocument, MintError>;
    fn withdraw(&self, req: &WithdrawRequest) -> Result<WithdrawResponse, MintError>;
    fn deposit(&self, req: &DepositRequest) -> Result<DepositConfirmation, MintError>;
    fn refresh_commit(&self, req: &RefreshCommitRequest) -> Result<RefreshChallenge, MintError>;
    fn refresh_reveal(
        &self,
        req: &RefreshRevealRequest,
    ) -> Result<RefreshRevealResponse, MintError>;
    fn link(&self, req: &LinkRequest) -> Result<LinkResponse, MintError>;
    fn refund(&self, req: &RefundRequest) -> Result<RefundResponse, MintError>;
    fn audit(&self, denom_id: &DenomId) -> Result<AuditReport, MintError>;
}

impl MintApi for Mint {
    fn keys(&self) -> Result<KeysDocument, MintError> {
        Ok(Mint::keys(self))
    }

    fn withdraw(&self, req: &WithdrawRequest) -> Result<WithdrawResponse, MintError> {
        Mint::withdraw(self, req)
    }

    fn deposit(&self, req: &DepositRequest) -> Result<DepositConfirmation, MintError> {
        Mint::deposit(self, req)
    }

    fn refresh_commit(&self, req: &RefreshCommitRequest) -> Result<RefreshChallenge, MintError> {
        Mint::refresh_commit(self, req)
    }

    fn refresh_reveal(
        &self,
        req: &RefreshRevealRequest,
    ) -> Result<RefreshRevealResponse, MintError> {
        Mint::refresh_reveal(self, req)
    }

    fn link(&self, req: &LinkRequest) -> Result<LinkResponse, MintError> {
        Mint::link(self, req)
    }

    fn refund(&self, req: &RefundRequest) -> Result<RefundResponse, MintError> {
        Mint::refund_revoked(self, req)
    }

    fn audit(&self, denom_id: &DenomId) -> Result<AuditReport, MintError> {
        Mint::audit_denomination(self, denom_id)
    }
}

pub trait GatewayApi: Send + Sync {
    fn withdraw_for_customer(
        &self,
        req: &CustomerWithdrawRequest,
    ) -> Result<WithdrawResponse, GatewayError>;
    fn forward_deposit(
        &self,
        req: &DepositForwardRequest,
    ) -> Result<DepositConfirmation, GatewayError>;
    fn refund_for_customer(
        &self,
        req: &CustomerRefundRequest,
    ) -> Result<RefundResponse, GatewayError>;
}

impl GatewayApi for Gateway {
    fn withdraw_for_customer(
        &self,
        req: &CustomerWithdrawRequest,
    ) -> Result<WithdrawResponse, GatewayError> {
        Gateway::withdraw_for_customer(self, req)
    }

    fn forward_deposit(
        &self,
        req: &DepositForwardRequest,
    ) -> Result<DepositConfirmation, GatewayError> {
        Gateway::forward_deposit(self, req)
    }

    fn refund_for_customer(
        &self,
        req: &CustomerRefundRequest,
    ) -> Result<RefundResponse, GatewayError> {
        Gateway::refund_for_customer(self, req)
    }
}

impl<T: MintApi + ?Sized> MintApi for std::sync::Arc<T> {
    fn keys(&self) -> Result<KeysDocument, MintError> {
        (**self).keys()
    }

    fn withdraw(&self, req: &WithdrawRequest) -> Result<WithdrawResponse, MintError> {
        (**self).withdraw(req)
    }

    fn deposit(&self, req: &DepositRequest) -> Result<DepositConfirmation, MintError> {
        (**self).deposit(req)
    }

    fn refresh_commit(&self, req: &RefreshCommitRequest) -> Result<RefreshChallenge, MintError> {
        (**self).refresh_commit(req)
    }

    fn refresh_reveal(
        &self,
        req: &RefreshRevealRequest,
    ) -> Result<RefreshRevealResponse, MintError> {
        (**self).refresh_reveal(req)
    }

    fn link(&self, req: &LinkRequest) -> Result<LinkResponse, MintError> {
        (**self).link(req)
    }

    fn refund(&self, req: &RefundRequest) -> Result<RefundResponse, MintError> {
        (**self).refund(req)
    }

    fn audit(&self, denom_id: &DenomId) -> Result<AuditReport, MintError> {
        (**self).audit(denom_id)
    }
}
