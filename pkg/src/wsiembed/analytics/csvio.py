"""CSV readers/writers for embeddings (``id,e0..e{D-1}``) and labels (``id,label``)."""

import csv

import numpy as np

from .sweep import LabeledEmbeddingSet


def write_embeddings_csv(path, ids, embeddings) -> None:
    embeddings = np.asarray(embeddings)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id"] + [f"e{i}" for i in range(embeddings.shape[1])])
        for ident, row in zip(ids, embeddings):
            writer.writerow([ident] + [repr(float(v)) for v in row])


def read_embeddings_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "id" or any(h != f"e{i}" for i, h in enumerate(header[1:])):
            raise ValueError(f"{path}: expected header id,e0,...,e{{D-1}}")
        ids, rows = [], []
        for line in reader:
            if not line:
                continue
            if len(line) != len(header):
                raise ValueError(f"{path}: row for {line[0]!r} has {len(line) - 1} values, expected {len(header) - 1}")
            ids.append(line[0])
            rows.append([float(v) for v in line[1:]])
    return ids, np.array(rows, dtype=np.float64).reshape(len(rows), len(header) - 1)


def write_labels_csv(path, ids, labels) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "label"])
        writer.writerows(zip(ids, (int(v) for v in labels)))


def read_labels_csv(path) -> dict:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["id", "label"]:
            raise ValueError(f"{path}: expected header id,label")
        return {row["id"]: int(row["label"]) for row in reader}


def load_labeled_set(embeddings_path, labels_path, task_name=None) -> LabeledEmbeddingSet:
    """Join embeddings and labels on ``id``; embeddings without a label are dropped."""
    ids, X = read_embeddings_csv(embeddings_path)
    labels = read_labels_csv(labels_path)
    keep = [i for i, ident in enumerate(ids) if ident in labels]
    if not keep:
        raise ValueError("no embedding ids match the label file")
    return LabeledEmbeddingSet(
        X[keep],
        np.array([labels[ids[i]] for i in keep]),
        task_name or str(labels_path),
        [ids[i] for i in keep],
    )
