"""
Unified vocabulary layout: command ids, then BEV ids, then trajectory ids.
"""

from enum import IntEnum
from typing import Tuple

from pydantic import BaseModel, ConfigDict, Field

from errors import DomainError


class Modality(IntEnum):
    COMMAND = 0
    BEV = 1
    TRAJ = 2


class VocabLayout(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    n_command: int = Field(4, ge=1)
    n_bev: int = Field(128, ge=1)
    n_traj: int = Field(1144, ge=1)

    @property
    def total(self) -> int:
        return self.n_command + self.n_bev + self.n_traj

    def size(self, modality: Modality) -> int:
        return (self.n_command, self.n_bev, self.n_traj)[Modality(modality)]

    def offset(self, modality: Modality) -> int:
        return (0, self.n_command, self.n_command + self.n_bev)[Modality(modality)]

    def token_range(self, modality: Modality) -> Tuple[int, int]:
        """Half-open [start, stop) range of global ids for a modality."""
        start = self.offset(modality)
        return start, start + self.size(modality)

    def modality_of(self, global_id: int) -> Modality:
        if not 0 <= global_id < self.total:
            raise DomainError(f"token id {global_id} outside [0, {self.total})")
        if global_id < self.n_command:
            return Modality.COMMAND
        if global_id < self.n_command + self.n_bev:
            return Modality.BEV
        return Modality.TRAJ


def vocab_map(layout: VocabLayout, modality: Modality, local_index: int) -> int:
    size = layout.size(modality)
    if not 0 <= local_index < size:
        raise DomainError(f"{Modality(modality).name.lower()} index {local_index} outside [0, {size})")
    return layout.offset(modality) + int(local_index)


def vocab_unmap(layout: VocabLayout, global_id: int) -> Tuple[Modality, int]:
    modality = layout.modality_of(global_id)
    return modality, int(global_id) - layout.offset(modality)
