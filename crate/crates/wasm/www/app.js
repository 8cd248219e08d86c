import init, { spectrum_json, model_curve, fourier_coefficients } from "./pkg/qresnet_wasm.js";

const $ = (id) => document.getElementById(id);

function axes(ctx, w, h) {
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#bbb";
  ctx.beginPath();
  ctx.moveTo(40, h / 2);
  ctx.lineTo(w - 10, h / 2);
  ctx.moveTo(40, 10);
  ctx.lineTo(40, h - 10);
  ctx.stroke();
}

function drawCurve(canvas, data) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  axes(ctx, w, h);
  const xmax = data.x[data.x.length - 1];
  const px = (x) => 40 + (x / xmax) * (w - 50);
  const py = (y) => h / 2 - y * (h / 2 - 10);
  ctx.fillStyle = "#666";
  ctx.fillText("1", 28, 14);
  ctx.fillText("-1", 24, h - 8);
  ctx.fillText("4π", w - 24, h / 2 + 14);
  ctx.strokeStyle = "#1565c0";
  ctx.lineWidth = 2;
  ctx.beginPath();
  data.x.forEach((x, i) => (i ? ctx.lineTo(px(x), py(data.y[i])) : ctx.moveTo(px(x), py(data.y[i]))));
  ctx.stroke();
  ctx.lineWidth = 1;
}

function drawCoefficients(canvas, c) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  const top = Math.max(1e-12, ...c.modulus);
  const slot = (w - 50) / c.frequencies.length;
  c.frequencies.forEach((f, i) => {
    const bar = (c.modulus[i] / top) * (h - 40);
    const x = 45 + i * slot;
    ctx.fillStyle = "#2e7d32";
    ctx.fillRect(x, h - 20 - bar, slot * 0.6, bar);
    ctx.fillStyle = "#444";
    ctx.fillText(`ω=${f}`, x, h - 6);
    ctx.fillText(c.modulus[i].toExponential(2), x, h - 24 - bar);
  });
}

function updateSpectrum() {
  try {
    const s = JSON.parse(spectrum_json($("sp-eig").value, Number($("sp-layers").value), $("sp-res").checked));
    $("sp-out").className = "";
    $("sp-out").textContent =
      `${s.frequencies.length} frequencies\n${s.frequencies.join(", ")}` +
      (s.forms.length ? `\n\nforms <a,b>: ${s.forms.map(([a, b]) => `<${a},${b}>`).join(" ")}` : "");
  } catch (e) {
    $("sp-out").className = "err";
    $("sp-out").textContent = String(e.message ?? e);
  }
}

function updateModel() {
  const enc = $("m-enc").value;
  const layers = Number($("m-layers").value);
  const seed = BigInt($("m-seed").value || 0);
  const alpha = Number($("m-alpha").value);
  const gamma = Number($("m-gamma").value);
  $("m-alpha-v").textContent = alpha.toFixed(2);
  $("m-gamma-v").textContent = gamma.toFixed(2);
  try {
    drawCurve($("m-curve"), JSON.parse(model_curve(enc, layers, seed, alpha, gamma, 400)));
    drawCoefficients($("m-coef"), JSON.parse(fourier_coefficients(enc, layers, seed, alpha, gamma)));
    $("m-err").textContent = "";
  } catch (e) {
    $("m-err").textContent = String(e.message ?? e);
  }
}

await init();
for (const id of ["sp-eig", "sp-layers", "sp-res"]) $(id).addEventListener("input", updateSpectrum);
for (const id of ["m-enc", "m-layers", "m-seed", "m-alpha", "m-gamma"]) $(id).addEventListener("input", updateModel);
updateSpectrum();
updateModel();
