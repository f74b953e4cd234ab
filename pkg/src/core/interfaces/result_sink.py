from abc import ABC, abstractmethod
from typing import Any, Dict, Optional

import pandas as pd


class IResultSink(ABC):
    @abstractmethod
    def write_table(self, name: str, table: pd.DataFrame) -> Optional[str]:
        """Persist a table; returns where it went (path, key) or None."""
        pass

    @abstractmethod
    def write_report(self, name: str, report: Dict[str, Any]) -> Optional[str]:
        pass
