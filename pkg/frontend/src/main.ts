import { ApiError, getHealth, getProducts, postRank } from "./api.js";
import { Session } from "./state.js";
import { grabElements, render, renderStatus } from "./ui.js";

/** Wire the ask loop to a document. Exported so tests can drive it against
 * jsdom with a stubbed API; the bottom of the file boots it in the browser. */
export function boot(
  doc: Document,
  api = { getHealth, getProducts, postRank }
): Session {
  const els = grabElements(doc);
  const session = new Session();

  api
    .getHealth()
    .then((h) => renderStatus(els, `model ${h.checkpoint_digest.slice(0, 12)}, ${h.vocab_size} tokens`))
    .catch(() => renderStatus(els, "service unreachable", true));

  api
    .getProducts()
    .then((products) => {
      session.setProducts(products);
      if (products.length > 0 && products[0]) session.selectProduct(products[0].product_id);
      render(session, els);
    })
    .catch(() => renderStatus(els, "could not load the product list", true));

  els.picker.addEventListener("change", () => {
    session.selectProduct(els.picker.value);
    render(session, els);
  });

  const submit = async () => {
    const question = els.question.value;
    const started = session.begin(question);
    if (started === "empty") {
      renderStatus(els, "type a question first", true);
      return;
    }
    if (started === "no-product") {
      renderStatus(els, "pick a product first", true);
      return;
    }
    if (started === "busy") return;
    renderStatus(els, "");
    render(session, els);
    try {
      const response = await postRankFor(started);
      session.resolve(started, response);
      els.question.value = "";
    } catch (e) {
      session.fail(started, e instanceof ApiError ? e.message : "unexpected error");
    }
    render(session, els);
  };

  const postRankFor = (index: number) => {
    const entry = session.history[index];
    if (!entry) throw new Error(`no entry ${index}`);
    return api.postRank({ product_id: entry.productId, question: entry.question });
  };

  els.ask.addEventListener("click", () => void submit());
  els.question.addEventListener("keydown", (ev) => {
    if ((ev as KeyboardEvent).key === "Enter") void submit();
  });

  return session;
}

// boot only when the page shell is actually present, so importing this
// module in tests stays side-effect free
if (typeof document !== "undefined" && document.getElementById("product-picker")) {
  boot(document);
}
