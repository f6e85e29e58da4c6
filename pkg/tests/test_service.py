import hashlib
import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from specmatch.cli import main
from specmatch.data import SpecProduct, save_jsonl
from specmatch.errors import ConfigError
from specmatch.service import create_app
from specmatch.synthetic import catalog_pairs, collect_tokens, demo_catalog, write_embedding_file
from specmatch.text import load_embeddings
from specmatch.train import TrainConfig, build_model, fit, load_checkpoint, save_checkpoint


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    root = tmp_path_factory.mktemp("svc")
    catalog = demo_catalog()
    save_jsonl(root / "catalog.jsonl", catalog)
    pairs = catalog_pairs(catalog)
    texts = [p.question for p in pairs] + [p.candidate for p in pairs]
    write_embedding_file(root / "emb.txt", collect_tokens(texts), 8, seed=0)
    vocab, table = load_embeddings(root / "emb.txt")
    cfg = TrainConfig(hidden=4, epochs_max=1, patience=0, batch_size=16)
    model = build_model(cfg, vocab, table)
    ckpt = fit(model, pairs, pairs, cfg)
    save_checkpoint(root / "m.ckpt", ckpt)
    return root


@pytest.fixture(scope="module")
def client(files):
    app = create_app(
        checkpoint_path=files / "m.ckpt",
        embeddings_path=files / "emb.txt",
        catalog_path=files / "catalog.jsonl",
    )
    with TestClient(app) as c:
        yield c


def test_healthz_is_503_before_startup(files):
    app = create_app(
        checkpoint_path=files / "m.ckpt",
        embeddings_path=files / "emb.txt",
        catalog_path=files / "catalog.jsonl",
    )
    bare = TestClient(app)
    resp = bare.get("/healthz")
    assert resp.status_code == 503
    assert resp.json() == {"code": 503, "message": "model is not loaded yet"}


def test_healthz_reports_file_digest_and_vocab_size(files, client):
    resp = client.get("/healthz")
    assert resp.status_code == 200
    body = resp.json()
    assert body["status"] == "ok"
    assert body["checkpoint_digest"] == hashlib.sha256((files / "m.ckpt").read_bytes()).hexdigest()
    vocab, _ = load_embeddings(files / "emb.txt")
    assert body["vocab_size"] == len(vocab.tokens)


def test_products_sorted_by_id_and_stable(client):
    first = client.get("/products")
    assert first.status_code == 200
    body = first.json()
    ids = [p["product_id"] for p in body]
    assert ids == sorted(ids)
    assert {"product_id", "category", "spec_count"} == set(body[0].keys())
    micro = next(p for p in body if p["product_id"] == "207025690")
    assert micro["category"] == "Microwaves"
    assert micro["spec_count"] == 5
    assert client.get("/products").json() == body


def test_empty_catalog_lists_nothing(files, tmp_path):
    empty = tmp_path / "none.jsonl"
    empty.write_text("")
    app = create_app(
        checkpoint_path=files / "m.ckpt",
        embeddings_path=files / "emb.txt",
        catalog_path=empty,
    )
    with TestClient(app) as c:
        resp = c.get("/products")
        assert resp.status_code == 200
        assert resp.json() == []


def test_rank_returns_every_spec_in_descending_order(client):
    resp = client.post(
        "/rank", json={"product_id": "207025690", "question": "What is the wattage?"}
    )
    assert resp.status_code == 200
    body = resp.json()
    assert body["product_id"] == "207025690"
    assert len(body["ranked"]) == 5
    probs = [r["probability"] for r in body["ranked"]]
    assert probs == sorted(probs, reverse=True)
    names = {r["spec_name"] for r in body["ranked"]}
    assert names == {
        "Wattage (watts)",
        "Capacity (cu. ft.)",
        "Turntable",
        "Product Width (in.)",
        "Color/Finish",
    }
    top = body["ranked"][0]
    assert body["answer_sentence"] == f"The {top['spec_name']} is {top['spec_value']}."


def test_rank_probabilities_equal_the_cli_exactly(files, client, capsys):
    question = "What is the wattage?"
    assert main(["rank", "--ckpt", str(files / "m.ckpt"),
                 "--embeddings", str(files / "emb.txt"),
                 "--question", question,
                 "--product-file", str(files / "catalog.jsonl"),
                 "--product-id", "207025690", "--json"]) == 0
    from_cli = json.loads(capsys.readouterr().out)["ranked"]
    from_http = client.post(
        "/rank", json={"product_id": "207025690", "question": question}
    ).json()["ranked"]
    assert [r["spec_name"] for r in from_cli] == [r["spec_name"] for r in from_http]
    for a, b in zip(from_cli, from_http):
        assert a["probability"] == b["probability"]


def test_rank_top_k_truncates_but_keeps_the_answer(client):
    full = client.post(
        "/rank", json={"product_id": "205209621", "question": "How deep is the fridge?"}
    ).json()
    cut = client.post(
        "/rank",
        json={"product_id": "205209621", "question": "How deep is the fridge?", "top_k": 2},
    ).json()
    assert len(cut["ranked"]) == 2
    assert cut["ranked"] == full["ranked"][:2]
    assert cut["answer_sentence"] == full["answer_sentence"]


def test_rank_unknown_product_is_404(client):
    resp = client.post("/rank", json={"product_id": "000000", "question": "What?"})
    assert resp.status_code == 404
    body = resp.json()
    assert body["code"] == 404
    assert "000000" in body["message"]


@pytest.mark.parametrize("question", ["", "   "])
def test_rank_empty_question_is_400(client, question):
    resp = client.post("/rank", json={"product_id": "207025690", "question": question})
    assert resp.status_code == 400
    assert resp.json()["code"] == 400


def test_rank_malformed_body_is_400_with_error_shape(client):
    resp = client.post("/rank", json={"product_id": "207025690"})
    assert resp.status_code == 400
    body = resp.json()
    assert set(body.keys()) == {"code", "message"}
    assert body["code"] == 400


def test_rank_rejects_top_k_zero(client):
    resp = client.post(
        "/rank", json={"product_id": "207025690", "question": "What is it?", "top_k": 0}
    )
    assert resp.status_code == 400


def test_identical_requests_identical_responses(client):
    payload = {"product_id": "301688014", "question": "How big is the screen?"}
    assert client.post("/rank", json=payload).json() == client.post("/rank", json=payload).json()


def test_single_spec_product_ranks_it_first(files, tmp_path):
    solo = tmp_path / "solo.jsonl"
    save_jsonl(solo, [SpecProduct(product_id="solo1", category="Misc",
                                  specs=[("Wattage (watts)", "800")])])
    app = create_app(
        checkpoint_path=files / "m.ckpt",
        embeddings_path=files / "emb.txt",
        catalog_path=solo,
    )
    with TestClient(app) as c:
        body = c.post("/rank", json={"product_id": "solo1", "question": "Anything?"}).json()
        assert [r["spec_name"] for r in body["ranked"]] == ["Wattage (watts)"]
        assert body["answer_sentence"] == "The Wattage (watts) is 800."


def test_category_templates_override_the_default(files, tmp_path):
    templates = tmp_path / "templates.json"
    templates.write_text(json.dumps({
        "Microwaves": "Microwave spec {spec_name}: {spec_value}",
        "default": "{spec_name} -> {spec_value}",
    }))
    app = create_app(
        checkpoint_path=files / "m.ckpt",
        embeddings_path=files / "emb.txt",
        catalog_path=files / "catalog.jsonl",
        templates_path=templates,
    )
    with TestClient(app) as c:
        micro = c.post(
            "/rank", json={"product_id": "207025690", "question": "What is the wattage?"}
        ).json()
        top = micro["ranked"][0]
        assert micro["answer_sentence"] == f"Microwave spec {top['spec_name']}: {top['spec_value']}"
        tv = c.post(
            "/rank", json={"product_id": "301688014", "question": "What is the screen size?"}
        ).json()
        top = tv["ranked"][0]
        assert tv["answer_sentence"] == f"{top['spec_name']} -> {top['spec_value']}"


def test_unrenderable_template_fails_startup(files, tmp_path):
    templates = tmp_path / "broken.json"
    templates.write_text(json.dumps({"default": "The {speck_name} is here"}))
    app = create_app(
        checkpoint_path=files / "m.ckpt",
        embeddings_path=files / "emb.txt",
        catalog_path=files / "catalog.jsonl",
        templates_path=templates,
    )
    with pytest.raises(ConfigError, match="renderable"):
        with TestClient(app):
            pass


def test_numeric_breakdown_is_500(files, tmp_path):
    ckpt = load_checkpoint(files / "m.ckpt")
    ckpt.params["scorer.b"] = np.full((1, 1), np.nan)
    broken = tmp_path / "nan.ckpt"
    save_checkpoint(broken, ckpt)
    app = create_app(
        checkpoint_path=broken,
        embeddings_path=files / "emb.txt",
        catalog_path=files / "catalog.jsonl",
    )
    with TestClient(app) as c:
        resp = c.post(
            "/rank", json={"product_id": "207025690", "question": "What is the wattage?"}
        )
        assert resp.status_code == 500
        assert resp.json()["code"] == 500
