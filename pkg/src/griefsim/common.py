import json
from dataclasses import dataclass, asdict
from enum import Enum
from typing import Optional, Tuple

class Protocol(Enum):
    HTLC = "htlc"
    HTLC_GP = "htlc-gp"
    HTLC_GP_ZETA = "htlc-gp-zeta"

    @property
    def penalized(self):
        return self is not Protocol.HTLC

class BalanceMode(Enum):
    unilateral = "unilateral"   # whole capacity on the first endpoint
    split = "split"             # floor half to a, remainder to b

class Nature(Enum):
    corrupt = "corrupt"
    uncorrupt = "uncorrupt"

class PayeeAction(Enum):
    RELEASE_X = "release_x"
    RELEASE_R = "release_r"
    GRIEF = "grief"
    WAIT_REJECT_AT_DEADLINE = "wait_reject_at_deadline"

class Strategy(Enum):
    grief = "grief"
    wait_reject_at_deadline = "wait_reject_at_deadline"

    def payee_action(self):
        if self is Strategy.grief:
            return PayeeAction.GRIEF
        return PayeeAction.WAIT_REJECT_AT_DEADLINE

class ContractState(Enum):
    proposed = "proposed"
    active = "active"
    resolved_release = "resolved_release"
    resolved_timeout = "resolved_timeout"

class LedgerKind(Enum):
    lock = "lock"
    release = "release"     # off-chain, mutually agreed
    settle = "settle"       # on-chain claim
    close = "close"

class AbortCode(Enum):
    BELIEF_TOO_HIGH = "BELIEF_TOO_HIGH"
    HASH_MISMATCH = "HASH_MISMATCH"
    DEADLINE_TOO_CLOSE = "DEADLINE_TOO_CLOSE"
    TIMEOUT_ORDER = "TIMEOUT_ORDER"
    AMOUNT_MISMATCH = "AMOUNT_MISMATCH"
    PENALTY_MISMATCH = "PENALTY_MISMATCH"
    PENALTY_EXCEEDS_MAXIMUM = "PENALTY_EXCEEDS_MAXIMUM"
    BLINDING_MISMATCH = "BLINDING_MISMATCH"
    MIN_COMPENSATION_VIOLATED = "MIN_COMPENSATION_VIOLATED"
    INSUFFICIENT_REMAIN = "INSUFFICIENT_REMAIN"
    MISSING_CANCELLATION_CONTRACT = "MISSING_CANCELLATION_CONTRACT"
    CHANNEL_CLOSED = "CHANNEL_CLOSED"

class GriefsimError(Exception):
    pass

class ConfigError(GriefsimError):
    pass

class SnapshotError(GriefsimError):
    pass

class InfeasibleExperiment(GriefsimError):
    pass

class ChannelError(GriefsimError):
    pass

class ContractError(GriefsimError):
    pass

class UnboundedError(GriefsimError):
    pass

class LockAborted(GriefsimError):
    """A locking round stopped at `hop` because the named check failed.

    `locked_before_abort` is the sum of penalties and payments that were
    already locked (and have since been unwound) when the check failed.
    """

    def __init__(self, hop, code, message="", locked_before_abort=0):
        self.hop = hop
        self.code = code
        self.locked_before_abort = locked_before_abort
        super().__init__("hop " + str(hop) + ": " + code.value + (" (" + message + ")" if message else ""))

@dataclass
class LedgerEvent:
    block:       int              # block height of the event
    channel:     Tuple[str, str]  # channel endpoints as stored
    kind:        LedgerKind
    party:       str              # locker, recipient or closer
    amount_sat:  int
    contract_id: Optional[str] = None

    def to_dict(self):
        d = asdict(self)
        d["channel"] = list(self.channel)
        d["kind"] = self.kind.value
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)
