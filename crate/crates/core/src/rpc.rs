//! Services over encoded messages. `serve_*` turns a request envelope into a
//! reply envelope; the clients implement the service traits on top of any
//! [`Link`] that carries bytes, so every call crosses the wire format.

use crate::api::{GatewayApi, MintApi};
use crate::gateway::GatewayError;
use crate::mint::MintError;
use crate::wire::{
    decode, encode, AuditReport, AuditRequest, CustomerRefundRequest, CustomerWithdrawRequest,
    DenomId, DepositConfirmation, DepositForwardRequest, DepositRequest, Empty, ErrorBody,
    KeysDocument, LinkRequest, LinkResponse, Message, RefreshChallenge, RefreshCommitRequest,
    RefreshRevealRequest, RefreshRevealResponse, RefundRequest, RefundResponse, WithdrawRequest,
    WithdrawResponse,
};

/// Carries one request to a service and brings back its reply. `None` means
/// the request or the reply was lost.
pub trait Link: Send + Sync {
    fn exchange(&self, request: Vec<u8>) -> Option<Vec<u8>>;
}

impl<F: Fn(Vec<u8>) -> Option<Vec<u8>> + Send + Sync> Link for F {
    fn exchange(&self, request: Vec<u8>) -> Option<Vec<u8>> {
        self(request)
    }
}

fn reply(result: Result<Message, ErrorBody>) -> Vec<u8> {
    let msg = result.unwrap_or_else(Message::Error);
    encode(&msg).unwrap_or_else(|e| {
        encode(&Message::Error(
            MintError::Malformed(e.to_string()).to_body(),
        ))
        .expect("error body fits")
    })
}

pub fn serve_mint(mint: &dyn MintApi, request: &[u8]) -> Vec<u8> {
    let err = |e: MintError| e.to_body();
    let result = match decode(request) {
        Err(e) => Err(err(MintError::Malformed(e.to_string()))),
        Ok(msg) => match msg {
            Message::KeysReq(_) => mint.keys().map(Message::Keys).map_err(err),
            Message::WithdrawReq(r) => mint.withdraw(&r).map(Message::WithdrawResp).map_err(err),
            Message::DepositReq(r) => mint.deposit(&r).map(Message::DepositResp).map_err(err),
            Message::RefreshCommitReq(r) => mint
                .refresh_commit(&r)
                .map(Message::RefreshChallenge)
                .map_err(err),
            Message::RefreshRevealReq(r) => mint
                .refresh_reveal(&r)
                .map(Message::RefreshRevealResp)
                .map_err(err),
            Message::LinkReq(r) => mint.link(&r).map(Message::LinkResp).map_err(err),
            Message::RefundReq(r) => mint.refund(&r).map(Message::RefundResp).map_err(err),
            Message::AuditReq(r) => mint.audit(&r.denom_id).map(Message::AuditResp).map_err(err),
            other => Err(err(MintError::Malformed(format!(
                "{} is not a mint request",
                other.msg_type().name()
            )))),
        },
    };
    reply(result)
}

pub fn serve_gateway(gateway: &dyn GatewayApi, request: &[u8]) -> Vec<u8> {
    let err = |e: GatewayError| e.to_body();
    let result = match decode(request) {
        Err(e) => Err(MintError::Malformed(e.to_string()).to_body()),
        Ok(msg) => match msg {
            Message::CustomerWithdrawReq(r) => gateway
                .withdraw_for_customer(&r)
                .map(Message::WithdrawResp)
                .map_err(err),
            Message::DepositForwardReq(r) => gateway
                .forward_deposit(&r)
                .map(Message::DepositResp)
                .map_err(err),
            Message::CustomerRefundReq(r) => gateway
                .refund_for_customer(&r)
                .map(Message::RefundResp)
                .map_err(err),
            other => Err(MintError::Malformed(format!(
                "{} is not a gateway request",
                other.msg_type().name()
            ))
            .to_body()),
        },
    };
    reply(result)
}

/// Client side of a mint reached through `L`.
pub struct MintClient<L> {
    link: L,
}

impl<L: Link> MintClient<L> {
    pub fn new(link: L) -> Self {
        MintClient { link }
    }

    fn call(&self, request: Message) -> Result<Message, MintError> {
        let bytes = encode(&request).map_err(|e| MintError::Malformed(e.to_string()))?;
        let reply = self
            .link
            .exchange(bytes)
            .ok_or_else(|| MintError::Unavailable("no reply".into()))?;
        match decode(&reply).map_err(|e| MintError::Malformed(e.to_string()))? {
            Message::Error(body) => Err(MintError::from_body(&body).unwrap_or_else(|| {
                MintError::Malformed(format!("unexpected error code {}", body.code))
            })),
            msg => Ok(msg),
        }
    }
}

fn unexpected<T>(msg: Message) -> Result<T, MintError> {
    Err(MintError::Malformed(format!(
        "unexpected reply {}",
        msg.msg_type().name()
    )))
}

impl<L: Link> MintApi for MintClient<L> {
    fn keys(&self) -> Result<KeysDocument, MintError> {
        match self.call(Message::KeysReq(Empty))? {
            Message::Keys(k) => Ok(k),
            m => unexpected(m),
        }
    }

    fn withdraw(&self, req: &WithdrawRequest) -> Result<WithdrawResponse, MintError> {
        match self.call(Message::WithdrawReq(req.clone()))? {
            Message::WithdrawResp(r) => Ok(r),
            m => unexpected(m),
        }
    }

    fn deposit(&self, req: &DepositRequest) -> Result<DepositConfirmation, MintError> {
        match self.call(Message::DepositReq(req.clone()))? {
            Message::DepositResp(r) => Ok(r),
            m => unexpected(m),
        }
    }

    fn refresh_commit(&self, req: &RefreshCommitRequest) -> Result<RefreshChallenge, MintError> {
        match self.call(Message::RefreshCommitReq(req.clone()))? {
            Message::RefreshChallenge(r) => Ok(r),
            m => unexpected(m),
        }
    }

    fn refresh_reveal(
        &self,
        req: &RefreshRevealRequest,
    ) -> Result<RefreshRevealResponse, MintError> {
        match self.call(Message::RefreshRevealReq(req.clone()))? {
            Message::RefreshRevealResp(r) => Ok(r),
            m => unexpected(m),
        }
    }

    fn link(&self, req: &LinkRequest) -> Result<LinkResponse, MintError> {
        match self.call(Message::LinkReq(req.clone()))? {
            Message::LinkResp(r) => Ok(r),
            m => unexpected(m),
        }
    }

    fn refund(&self, req: &RefundRequest) -> Result<RefundResponse, MintError> {
        match self.call(Message::RefundReq(req.clone()))? {
            Message::RefundResp(r) => Ok(r),
            m => unexpected(m),
        }
    }

    fn audit(&self, denom_id: &DenomId) -> Result<AuditReport, MintError> {
        match self.call(Message::AuditReq(AuditRequest {
            denom_id: *denom_id,
        }))? {
            Message::AuditResp(r) => Ok(r),
            m => unexpected(m),
        }
    }
}

/// Client side of a bank gateway reached through `L`.
pub struct GatewayClient<L> {
    link: L,
}

impl<L: Link> GatewayClient<L> {
    pub fn new(link: L) -> Self {
        GatewayClient { link }
    }

    fn call(&self, request: Message) -> Result<Message, GatewayError> {
        let malformed = |s: String| GatewayError::MintRejected(MintError::Malformed(s));
        let bytes = encode(&request).map_err(|e| malformed(e.to_string()))?;
        let reply = self
            .link
            .exchange(bytes)
            .ok_or_else(|| GatewayError::Unavailable("no reply".into()))?;
        match decode(&reply).map_err(|e| malformed(e.to_string()))? {
            Message::Error(body) => Err(GatewayError::from_body(&body)
                .unwrap_or_else(|| malformed(format!("unexpected error code {}", body.code)))),
            msg => Ok(msg),
        }
    }
}

fn unexpected_gw<T>(msg: Message) -> Result<T, GatewayError> {
    Err(GatewayError::MintRejected(MintError::Malformed(format!(
        "unexpected reply {}",
        msg.msg_type().name()
    ))))
}

impl<L: Link> GatewayApi for GatewayClient<L> {
    fn withdraw_for_customer(
        &self,
        req: &CustomerWithdrawRequest,
    ) -> Result<WithdrawResponse, GatewayError> {
        match self.call(Message::CustomerWithdrawReq(req.clone()))? {
            Message::WithdrawResp(r) => Ok(r),
            m => unexpected_gw(m),
        }
    }

    fn forward_deposit(
        &self,
        req: &DepositForwardRequest,
    ) -> Result<DepositConfirmation, GatewayError> {
        match self.call(Message::DepositForwardReq(req.clone()))? {
            Message::DepositResp(r) => Ok(r),
            m => unexpected_gw(m),
        }
    }

    fn refund_for_customer(
        &self,
        req: &CustomerRefundRequest,
    ) -> Result<RefundResponse, GatewayError> {
        match self.call(Message::CustomerRefundReq(req.clone()))? {
            Message::RefundResp(r) => Ok(r),
            m => unexpected_gw(m),
        }
    }
}
