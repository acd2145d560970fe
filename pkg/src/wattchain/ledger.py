"""Token accounting: balances, transfers and allowances, one token per Wh.

The ledger is only ever mutated by the chain-commit path (plus the genesis
endowment); every other consumer reads immutable snapshots. All amounts
are integers, so conservation checks are exact.
"""

from __future__ import annotations

import hashlib
import os
import tempfile


class LedgerError(Exception):
    pass


class InsufficientBalance(LedgerError):
    def __init__(self, have: int, need: int):
        super().__init__(f"balance {have} cannot cover {need}")
        self.have = have
        self.need = need


class InsufficientAllowance(LedgerError):
    def __init__(self, have: int, need: int):
        super().__init__(f"allowance {have} cannot cover {need}")
        self.have = have
        self.need = need


class MintAfterGenesis(LedgerError):
    pass


def address_for(node_id: str) -> str:
    """Deterministic 64-hex account address derived from a node identity."""
    return hashlib.sha256(node_id.encode("utf-8")).hexdigest()


class TokenLedger:
    """Account balances and allowances with exact integer arithmetic."""

    def __init__(self):
        self.accounts: dict[str, int] = {}
        self.allowances: dict[tuple[str, str], int] = {}
        self.total_supply: int = 0
        self._sealed = False

    def balance_of(self, address: str) -> int:
        return self.accounts.get(address, 0)

    def allowance(self, owner: str, spender: str) -> int:
        return self.allowances.get((owner, spender), 0)

    def mint(self, address: str, amount: int) -> None:
        """Create the genesis endowment; refused once the ledger is sealed."""
        if self._sealed:
            raise MintAfterGenesis("ledger is sealed; minting is genesis-only")
        if not isinstance(amount, int) or amount <= 0:
            raise ValueError(f"mint amount must be a positive integer, got {amount!r}")
        self.accounts[address] = self.accounts.get(address, 0) + amount
        self.total_supply += amount

    def seal_genesis(self) -> None:
        self._sealed = True

    def transfer(self, sender: str, receiver: str, amount: int) -> None:
        """Move tokens atomically; a self-transfer is a recorded no-op."""
        if not isinstance(amount, int) or amount <= 0:
            raise ValueError(f"transfer amount must be a positive integer, got {amount!r}")
        if sender == receiver:
            return
        have = self.balance_of(sender)
        if have < amount:
            raise InsufficientBalance(have, amount)
        self.accounts[sender] = have - amount
        self.accounts[receiver] = self.balance_of(receiver) + amount

    def approve(self, owner: str, spender: str, amount: int) -> None:
        """Set (overwrite) the spender's allowance; zero clears it."""
        if not isinstance(amount, int) or amount < 0:
            raise ValueError(f"allowance must be a non-negative integer, got {amount!r}")
        if amount == 0:
            self.allowances.pop((owner, spender), None)
        else:
            self.allowances[(owner, spender)] = amount

    def transfer_from(self, spender: str, owner: str, receiver: str, amount: int) -> None:
        if not isinstance(amount, int) or amount <= 0:
            raise ValueError(f"transfer amount must be a positive integer, got {amount!r}")
        allowed = self.allowance(owner, spender)
        if allowed < amount:
            raise InsufficientAllowance(allowed, amount)
        have = self.balance_of(owner)
        if have < amount:
            raise InsufficientBalance(have, amount)
        self.approve(owner, spender, allowed - amount)
        if owner != receiver:
            self.accounts[owner] = have - amount
            self.accounts[receiver] = self.balance_of(receiver) + amount

    def snapshot(self) -> dict[str, int]:
        return dict(self.accounts)

    def save_wallets(self, path: str) -> None:
        """Persist balances as `address amount` lines, rewritten atomically."""
        lines = [f"{addr} {bal}" for addr, bal in sorted(self.accounts.items())]
        text = "\n".join(lines) + ("\n" if lines else "")
        directory = os.path.dirname(os.path.abspath(path))
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".wallets-", text=True)
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load_wallets(cls, path: str) -> "TokenLedger":
        ledger = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                addr, bal = line.split()
                ledger.accounts[addr] = int(bal)
        ledger.total_supply = sum(ledger.accounts.values())
        ledger.seal_genesis()
        return ledger
