"""Train-on-synthetic, test-on-real utility (mean ROC-AUC over a classifier suite)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import roc_auc_score
from sklearn.neighbors import KNeighborsClassifier
from sklearn.tree import DecisionTreeClassifier

from ..codec import TableSchema

CLASSIFIERS = {
    "logreg": lambda seed: LogisticRegression(max_iter=1000, random_state=seed),
    "tree": lambda seed: DecisionTreeClassifier(max_depth=3, random_state=seed),
    "knn": lambda seed: KNeighborsClassifier(n_neighbors=5),
}


class UtilityError(ValueError):
    pass


@dataclass
class UtilityReport:
    auc: dict[str, float]

    @property
    def phi(self) -> float:
        return float(np.mean(list(self.auc.values())))


def design_matrix(table: pd.DataFrame, schema: TableSchema, mean=None, std=None):
    """One-hot categoricals (schema vocab) and standardised numerics."""
    parts, names = [], []
    num = [c for c in schema.feature_columns if c.is_numeric]
    if num:
        x = np.column_stack([pd.to_numeric(table[c.name]).to_numpy(np.float64) for c in num])
        if mean is None:
            mean, std = x.mean(0), x.std(0)
            std = np.where(std > 0, std, 1.0)
        parts.append((x - mean) / std)
    for c in schema.feature_columns:
        if c.is_numeric:
            continue
        vals = table[c.name].astype(str).to_numpy()
        parts.append(np.stack([vals == v for v in c.vocab], axis=1).astype(np.float64))
    x = np.hstack(parts) if parts else np.zeros((len(table), 0))
    return x, mean, std


def binary_target(table: pd.DataFrame, schema: TableSchema) -> np.ndarray:
    if schema.label_column is None or schema.label_column not in table.columns:
        raise UtilityError("utility needs a label column in both tables")
    labels = schema.labels
    if len(labels) != 2:
        raise UtilityError(f"utility needs a binary label, got {len(labels)} classes")
    return (table[schema.label_column].astype(str).to_numpy() == labels[1]).astype(int)


def utility_phi(synth_train: pd.DataFrame, real_test: pd.DataFrame, schema: TableSchema,
                classifiers=("logreg", "tree", "knn"), seed: int = 0) -> UtilityReport:
    y_train = binary_target(synth_train, schema)
    y_test = binary_target(real_test, schema)
    if len(np.unique(y_train)) < 2:
        raise UtilityError("training labels contain a single class; AUC undefined")
    if len(np.unique(y_test)) < 2:
        raise UtilityError("test labels contain a single class; AUC undefined")
    x_train, mean, std = design_matrix(synth_train, schema)
    x_test, _, _ = design_matrix(real_test, schema, mean, std)
    auc = {}
    for name in classifiers:
        clf = CLASSIFIERS[name](seed).fit(x_train, y_train)
        auc[name] = float(roc_auc_score(y_test, clf.predict_proba(x_test)[:, 1]))
    return UtilityReport(auc)
