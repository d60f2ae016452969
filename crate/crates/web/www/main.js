import init, { Page, Model } from "./pkg/docenhance_web.js";

const $ = (id) => document.getElementById(id);
const sliders = ["stain", "saltpepper", "blur", "bleed", "density", "threshold"];

let page = null;
let model = null;
let token = 0;

function draw(canvas, rgba, w, h) {
  canvas.width = w;
  canvas.height = h;
  const img = new ImageData(new Uint8ClampedArray(rgba), w, h);
  canvas.getContext("2d").putImageData(img, 0, 0);
}

function report(err) {
  $("error").textContent = err ? String(err.message ?? err) : "";
}

function fill(row, s) {
  const cells = $(row).querySelectorAll("td");
  const vals = s ? [s.psnr, s.fm, s.fps, s.drd] : [NaN, NaN, NaN, NaN];
  vals.forEach((v, i) => {
    cells[i + 1].textContent = Number.isFinite(v) ? v.toFixed(3) : (v === Infinity ? "inf" : "-");
  });
  s?.free();
}

function synthesize() {
  const n = Number($("size").value);
  page?.free();
  page = new Page(n, n, Number($("seed").value),
    Number($("stain").value), Number($("saltpepper").value),
    Number($("blur").value), Number($("bleed").value), Number($("density").value));
  draw($("degraded"), page.degraded_rgba(), n, n);
  draw($("clean"), page.clean_rgba(), n, n);
  score();
  attention();
}

function score() {
  if (!page) return;
  const th = Number($("threshold").value);
  const n = page.width;
  draw($("thresholded"), page.threshold_rgba(th), n, page.height);
  try { fill("score-threshold", page.score_threshold(th)); } catch (e) { fill("score-threshold", null); }
  if (model) {
    draw($("enhanced"), model.enhance(page), n, page.height);
    try { fill("score-model", model.score(page, th)); } catch (e) { fill("score-model", null); }
  }
}

function setModel(m) {
  model?.free();
  model = m;
  $("model-info").textContent = model.describe();
  for (const [id, count, pick] of [["layer", model.layers, model.layers - 1], ["head", model.heads, Math.min(1, model.heads - 1)]]) {
    $(id).innerHTML = "";
    for (let i = 0; i < count; i++) $(id).add(new Option(String(i), String(i)));
    $(id).value = String(pick);
  }
  token = Math.floor(model.grid * model.grid / 2);
  score();
  attention();
}

function attention() {
  if (!page || !model) return;
  const s = model.window;
  const grid = model.grid;
  const win = $("attn-window");
  draw(win, model.attention_window(page), s, s);
  const ctx = win.getContext("2d");
  const cell = s / grid;
  ctx.strokeStyle = "#e00";
  ctx.strokeRect((token % grid) * cell + 0.5, Math.floor(token / grid) * cell + 0.5, cell - 1, cell - 1);
  draw($("attn-map"), model.attention(page, Number($("layer").value), Number($("head").value), token), s, s);
}

function guarded(f) {
  return (...args) => {
    try { report(null); f(...args); } catch (e) { report(e); }
  };
}

async function main() {
  await init();
  for (const id of sliders) {
    const input = $(id);
    const out = input.parentElement.querySelector("output");
    const show = () => { out.textContent = input.value; };
    show();
    input.addEventListener("input", show);
    input.addEventListener("change", guarded(id === "threshold" ? score : synthesize));
  }
  $("seed").addEventListener("change", guarded(synthesize));
  $("size").addEventListener("change", guarded(synthesize));
  $("layer").addEventListener("change", guarded(attention));
  $("head").addEventListener("change", guarded(attention));
  $("random-model").addEventListener("click", guarded(() => setModel(Model.random(Number($("seed").value)))));
  $("ckpt").addEventListener("change", async (ev) => {
    const file = ev.target.files[0];
    if (!file) return;
    const bytes = new Uint8Array(await file.arrayBuffer());
    guarded(() => setModel(Model.from_checkpoint(bytes)))();
  });
  $("attn-window").addEventListener("click", guarded((ev) => {
    if (!model) return;
    const rect = ev.target.getBoundingClientRect();
    const grid = model.grid;
    const col = Math.min(grid - 1, Math.floor((ev.clientX - rect.left) / rect.width * grid));
    const row = Math.min(grid - 1, Math.floor((ev.clientY - rect.top) / rect.height * grid));
    token = row * grid + col;
    attention();
  }));
  guarded(() => { synthesize(); setModel(Model.random(0)); })();
}

main();
