"""Dataset persistence, retail ingestion, and train/validation splitting.

CSV files are UTF-8 with a header row and RFC-4180 quoting; floats are
written with round-trip repr so that write-then-read reproduces the
in-memory values exactly.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np

from .choice import (
    ACCEPTED,
    REJECTED,
    UNLABELED,
    CustomerProfile,
    OfferAttributes,
    OfferObservation,
)
from .errors import (
    ConfigurationError,
    EmptySelectionError,
    InvalidInputError,
    MissingArtifactError,
    ParseError,
)
from .storage import fmt, write_text_atomic

OFFER_COLUMNS = (
    "id",
    "setnum",
    "X1",
    "contract_length_years",
    "offer_discount",
    "demographic_centered",
    "loyalty_centered",
    "outcome",
)
CUSTOMER_COLUMNS = ("id", "loyalty", "loyalty_centered", "demographic_centered", "mrp")
TRUTH_COLUMNS = ("id", "k", "beta_contract", "beta_discount")
SCORE_COLUMNS = ("customer_id", "occasion", "alternative", "score")
MULTINOMIAL_COLUMNS = ("customer_id", "occasion", "product_id", "chosen")

_OUTCOME_TO_CELL = {ACCEPTED: "1", REJECTED: "0", UNLABELED: ""}
_CELL_TO_OUTCOME = {"1": ACCEPTED, "0": REJECTED, "": UNLABELED}


def _write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(cell) for cell in row])
    write_text_atomic(path, buf.getvalue())


def _read_csv(path, expected_header=None):
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(str(path))
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file")
        if expected_header is not None and tuple(header) != tuple(expected_header):
            raise ParseError(f"{path}: expected header {expected_header}, got {header}")
        return header, list(reader)


def write_offer_csv(path, observations, profiles: dict) -> None:
    rows = []
    for o in observations:
        prof = profiles.get(o.customer_id)
        rows.append(
            (
                o.customer_id,
                o.occasion,
                o.attributes.intercept,
                o.attributes.contract_length,
                o.attributes.discount,
                prof.demographic_centered if prof else 0.0,
                prof.loyalty_centered if prof else 0.0,
                _OUTCOME_TO_CELL[o.outcome],
            )
        )
    _write_csv(path, OFFER_COLUMNS, rows)


def read_offer_csv(path):
    """Return (observations, covariate map id -> (loyalty_c, demographic_c))."""
    _, rows = _read_csv(path, OFFER_COLUMNS)
    observations = []
    covariates = {}
    for lineno, row in enumerate(rows, start=2):
        try:
            cid = int(row[0])
            obs = OfferObservation(
                customer_id=cid,
                occasion=int(row[1]),
                attributes=OfferAttributes(
                    intercept=float(row[2]),
                    contract_length=float(row[3]),
                    discount=float(row[4]),
                ),
                outcome=_CELL_TO_OUTCOME[row[7]],
            )
            covariates[cid] = (float(row[6]), float(row[5]))
        except (ValueError, KeyError, IndexError) as exc:
            raise ParseError(f"{path}: line {lineno}: {exc}")
        observations.append(obs)
    return observations, covariates


def write_customers_csv(path, profiles: dict, mrp: dict | None = None) -> None:
    mrp = mrp or {}
    rows = [
        (
            p.customer_id,
            p.loyalty,
            p.loyalty_centered,
            p.demographic_centered,
            mrp.get(p.customer_id, ""),
        )
        for p in (profiles[k] for k in sorted(profiles))
    ]
    _write_csv(path, CUSTOMER_COLUMNS, rows)


def read_customers_csv(path):
    """Return (profiles dict, mrp dict; mrp only for rows that carry one)."""
    _, rows = _read_csv(path, CUSTOMER_COLUMNS)
    profiles = {}
    mrp = {}
    for lineno, row in enumerate(rows, start=2):
        try:
            cid = int(row[0])
            profiles[cid] = CustomerProfile(
                customer_id=cid,
                loyalty=float(row[1]),
                loyalty_centered=float(row[2]),
                demographic_centered=float(row[3]),
            )
            if row[4] != "":
                mrp[cid] = float(row[4])
        except (ValueError, IndexError) as exc:
            raise ParseError(f"{path}: line {lineno}: {exc}")
    return profiles, mrp


def write_truth_csv(path, coefficients: dict) -> None:
    rows = [
        (cid, b.k, b.beta_contract, b.beta_discount)
        for cid, b in sorted(coefficients.items())
    ]
    _write_csv(path, TRUTH_COLUMNS, rows)


def read_truth_csv(path) -> dict:
    from .choice import CoefficientVector

    _, rows = _read_csv(path, TRUTH_COLUMNS)
    out = {}
    for lineno, row in enumerate(rows, start=2):
        try:
            out[int(row[0])] = CoefficientVector(float(row[1]), float(row[2]), float(row[3]))
        except (ValueError, IndexError) as exc:
            raise ParseError(f"{path}: line {lineno}: {exc}")
    return out


def write_scores_csv(path, rows) -> None:
    """rows: iterable of (customer_id, occasion, alternative, score)."""
    _write_csv(path, SCORE_COLUMNS, rows)


def read_scores_csv(path):
    _, rows = _read_csv(path, SCORE_COLUMNS)
    out = []
    for lineno, row in enumerate(rows, start=2):
        try:
            out.append((int(row[0]), int(row[1]), int(row[2]), float(row[3])))
        except (ValueError, IndexError) as exc:
            raise ParseError(f"{path}: line {lineno}: {exc}")
    return out


# ---------------------------------------------------------------------------
# Train / validation splitting (the resampling unit is the occasion)
# ---------------------------------------------------------------------------

PER_CUSTOMER_HOLDOUT = "per-customer-random-occasion"
KFOLD_BY_OCCASION = "k-fold-by-occasion"


@dataclass(frozen=True)
class ResamplingScheme:
    kind: str = KFOLD_BY_OCCASION
    folds: int = 10
    repeats: int = 1

    def validate(self) -> "ResamplingScheme":
        if self.kind not in (PER_CUSTOMER_HOLDOUT, KFOLD_BY_OCCASION):
            raise ConfigurationError(f"unknown resampling kind {self.kind!r}")
        if self.kind == KFOLD_BY_OCCASION and self.folds < 2:
            raise ConfigurationError("k-fold resampling needs folds >= 2")
        if self.repeats < 1:
            raise ConfigurationError("repeats must be >= 1")
        return self

    @property
    def cells_per_repeat(self) -> int:
        return self.folds if self.kind == KFOLD_BY_OCCASION else 1


def _occasion_units(items):
    units = {}
    for item in items:
        units.setdefault((item.customer_id, item.occasion), []).append(item)
    return units


def split_per_customer_holdout(items, seed: int):
    """Move one uniformly random non-first occasion per customer to
    validation; single-occasion customers stay entirely in training."""
    units = _occasion_units(items)
    by_customer = {}
    for cid, occ in units:
        by_customer.setdefault(cid, set()).add(occ)
    rng = np.random.default_rng(np.random.SeedSequence(seed & 0xFFFFFFFFFFFFFFFF))
    held_out = set()
    for cid in sorted(by_customer):
        occasions = sorted(by_customer[cid])
        if len(occasions) < 2:
            continue
        candidates = occasions[1:]  # never the first occasion
        held_out.add((cid, candidates[int(rng.integers(len(candidates)))]))
    train, validation = [], []
    for key in sorted(units):
        (validation if key in held_out else train).extend(units[key])
    return train, validation


def split_kfold_by_occasion(items, k: int, seed: int):
    """Partition occasions into k folds; returns k (train, validation) pairs."""
    units = _occasion_units(items)
    keys = sorted(units)
    if k > len(keys):
        raise InvalidInputError(f"cannot make {k} folds from {len(keys)} occasions")
    rng = np.random.default_rng(np.random.SeedSequence(seed & 0xFFFFFFFFFFFFFFFF))
    order = rng.permutation(len(keys))
    fold_of = np.empty(len(keys), dtype=int)
    fold_of[order] = np.arange(len(keys)) % k
    pairs = []
    for fold in range(k):
        train, validation = [], []
        for i, key in enumerate(keys):
            (validation if fold_of[i] == fold else train).extend(units[key])
        pairs.append((train, validation))
    return pairs


def split_train_validation(items, scheme, seed: int, fold: int = 0):
    """Single (train, validation) pair under the named scheme.

    For the k-fold scheme, ``fold`` selects which fold is validation.
    """
    if isinstance(scheme, ResamplingScheme):
        kind, k = scheme.kind, scheme.folds
    else:
        kind, k = scheme, 10
    if kind == PER_CUSTOMER_HOLDOUT:
        return split_per_customer_holdout(items, seed)
    if kind == KFOLD_BY_OCCASION:
        return split_kfold_by_occasion(items, k, seed)[fold]
    raise ConfigurationError(f"unknown split scheme {kind!r}")


# ---------------------------------------------------------------------------
# E-commerce (multinomial) ingestion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MultinomialChoiceSet:
    """One purchase occasion: every product in the line is an alternative
    with a chosen flag; augmentation occasions have zero chosen flags."""

    customer_id: int
    occasion: int
    alternatives: tuple  # ((product_id, chosen 0/1), ...)


@dataclass(frozen=True)
class MultinomialDataset:
    choice_sets: tuple
    product_ids: tuple

    @property
    def n_rows(self) -> int:
        return sum(len(cs.alternatives) for cs in self.choice_sets)


_RETAIL_ALIASES = {
    "invoice": ("Invoice", "InvoiceNo"),
    "stock": ("StockCode",),
    "description": ("Description",),
    "quantity": ("Quantity",),
    "date": ("InvoiceDate",),
    "customer": ("Customer ID", "CustomerID"),
}

_DATE_FORMATS = ("%d/%m/%Y %H:%M", "%m/%d/%Y %H:%M", "%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M")


def _parse_invoice_date(text: str):
    for fmt_ in _DATE_FORMATS:
        try:
            return datetime.strptime(text.strip(), fmt_)
        except ValueError:
            continue
    return None


def ingest_retail_csv(path, product_filter=None, n_products: int = 18) -> MultinomialDataset:
    """Restructure transaction data into per-occasion choice sets.

    Every invoice containing at least one product from the filtered line
    becomes one occasion with a row per product in the line; one extra
    all-no-purchase occasion is appended per customer.  When no explicit
    ``product_filter`` (set of stock codes) is given, the filter defaults
    to the ``n_products`` highest-volume codes whose description contains
    "CUP".
    """
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(str(path))
    with open(path, newline="", encoding="utf-8", errors="replace") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file")
        cols = {}
        for field_name, aliases in _RETAIL_ALIASES.items():
            for alias in aliases:
                if alias in header:
                    cols[field_name] = header.index(alias)
                    break
            else:
                raise ParseError(f"{path}: missing column {aliases[0]!r}")

        purchases = []  # (customer, invoice, date, stock)
        volume = {}
        description = {}
        for lineno, row in enumerate(reader, start=2):
            if len(row) <= max(cols.values()):
                raise ParseError(f"{path}: line {lineno}: too few fields")
            customer_cell = row[cols["customer"]].strip()
            if not customer_cell:
                continue
            invoice = row[cols["invoice"]].strip()
            if invoice.startswith(("C", "c")):
                continue  # cancellation
            try:
                customer = int(float(customer_cell))
                quantity = int(float(row[cols["quantity"]]))
            except ValueError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}")
            if quantity <= 0:
                continue
            stock = row[cols["stock"]].strip()
            desc = row[cols["description"]].strip()
            date = _parse_invoice_date(row[cols["date"]])
            purchases.append((customer, invoice, date, stock))
            volume[stock] = volume.get(stock, 0) + quantity
            if desc:
                description[stock] = desc

    if product_filter is None:
        cups = [s for s, d in description.items() if "CUP" in d.upper()]
        cups.sort(key=lambda s: (-volume.get(s, 0), s))
        product_filter = set(cups[:n_products])
    else:
        product_filter = set(product_filter)
        if not product_filter:
            raise InvalidInputError("product filter must be non-empty")

    line_purchases = [p for p in purchases if p[3] in product_filter]
    if not line_purchases:
        raise EmptySelectionError("product filter matched no transactions")

    products = tuple(sorted(product_filter))
    # occasions: invoices that include >= 1 product from the line
    by_customer = {}
    for customer, invoice, date, stock in line_purchases:
        by_customer.setdefault(customer, {}).setdefault(invoice, {"date": date, "chosen": set()})
        entry = by_customer[customer][invoice]
        entry["chosen"].add(stock)
        if entry["date"] is None or (date is not None and date < entry["date"]):
            entry["date"] = date

    choice_sets = []
    for customer in sorted(by_customer):
        invoices = by_customer[customer]
        ordered = sorted(
            invoices, key=lambda inv: (invoices[inv]["date"] or datetime.max, inv)
        )
        for occ, invoice in enumerate(ordered, start=1):
            chosen = invoices[invoice]["chosen"]
            choice_sets.append(
                MultinomialChoiceSet(
                    customer_id=customer,
                    occasion=occ,
                    alternatives=tuple((p, int(p in chosen)) for p in products),
                )
            )
        # augmentation: one all-no-purchase occasion per customer
        choice_sets.append(
            MultinomialChoiceSet(
                customer_id=customer,
                occasion=len(ordered) + 1,
                alternatives=tuple((p, 0) for p in products),
            )
        )
    return MultinomialDataset(choice_sets=tuple(choice_sets), product_ids=products)


def write_multinomial_csv(path, dataset: MultinomialDataset) -> None:
    rows = []
    for cs in dataset.choice_sets:
        for product_id, chosen in cs.alternatives:
            rows.append((cs.customer_id, cs.occasion, product_id, chosen))
    _write_csv(path, MULTINOMIAL_COLUMNS, rows)


def read_multinomial_csv(path) -> MultinomialDataset:
    _, rows = _read_csv(path, MULTINOMIAL_COLUMNS)
    grouped = {}
    products = set()
    for lineno, row in enumerate(rows, start=2):
        try:
            key = (int(row[0]), int(row[1]))
            grouped.setdefault(key, []).append((row[2], int(row[3])))
            products.add(row[2])
        except (ValueError, IndexError) as exc:
            raise ParseError(f"{path}: line {lineno}: {exc}")
    choice_sets = tuple(
        MultinomialChoiceSet(cid, occ, tuple(sorted(grouped[(cid, occ)])))
        for cid, occ in sorted(grouped)
    )
    return MultinomialDataset(choice_sets=choice_sets, product_ids=tuple(sorted(products)))


def multinomial_to_panel(dataset: MultinomialDataset):
    """Dummy-code choice sets into estimation arrays.

    Each (occasion, product) row becomes a binary outcome with the
    product's alternative-specific intercept as its only active feature.
    Returns (X, y, row_customer, customer_ids, row_meta).
    """
    products = dataset.product_ids
    col = {p: i for i, p in enumerate(products)}
    customer_ids = sorted({cs.customer_id for cs in dataset.choice_sets})
    pos = {cid: i for i, cid in enumerate(customer_ids)}
    n_rows = dataset.n_rows
    X = np.zeros((n_rows, len(products)))
    y = np.empty(n_rows)
    row_customer = np.empty(n_rows, dtype=np.intp)
    row_meta = []
    i = 0
    for cs in dataset.choice_sets:
        for product_id, chosen in cs.alternatives:
            X[i, col[product_id]] = 1.0
            y[i] = chosen
            row_customer[i] = pos[cs.customer_id]
            row_meta.append((cs.customer_id, cs.occasion, product_id))
            i += 1
    return X, y, row_customer, customer_ids, row_meta
