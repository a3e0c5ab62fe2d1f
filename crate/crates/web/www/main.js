import init, { lr_curve, augment_preview, default_augmentation_json, threshold_view } from "./pkg/effisegnet_web.js";

const $ = (id) => document.getElementById(id);

function putRgba(canvas, bytes, width, height) {
  canvas.width = width;
  canvas.height = height;
  const ctx = canvas.getContext("2d");
  ctx.putImageData(new ImageData(new Uint8ClampedArray(bytes), width, height), 0, 0);
}

function drawLr() {
  const canvas = $("lr-canvas");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  let values;
  try {
    values = lr_curve(Number($("lr-epochs").value), Number($("lr-initial").value), Number($("lr-final").value));
  } catch (e) {
    $("lr-info").textContent = String(e);
    return;
  }
  const max = Math.max(...values), min = Math.min(...values);
  const pad = 30, w = canvas.width - 2 * pad, h = canvas.height - 2 * pad;
  const y = (v) => pad + h - (max === min ? 0.5 : (v - min) / (max - min)) * h;
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w, h);
  ctx.strokeStyle = "#1565c0";
  ctx.lineWidth = 2;
  ctx.beginPath();
  values.forEach((v, i) => {
    const x = pad + (i / (values.length - 1)) * w;
    i === 0 ? ctx.moveTo(x, y(v)) : ctx.lineTo(x, y(v));
  });
  ctx.stroke();
  ctx.fillStyle = "#333";
  ctx.fillText(max.toExponential(2), 2, pad - 6);
  ctx.fillText(min.toExponential(2), 2, pad + h + 16);
  const mid = values[Math.floor((values.length - 1) / 2)];
  $("lr-info").textContent = `lr(0) = ${values[0].toExponential(3)}, lr(E/2) = ${mid.toExponential(3)}, lr(E) = ${values[values.length - 1].toExponential(3)}`;
}

function drawAug() {
  const size = 256;
  try {
    const bytes = augment_preview(
      BigInt($("aug-sample").value), BigInt($("aug-seed").value), Number($("aug-epoch").value), size, $("aug-config").value);
    putRgba($("aug-canvas"), bytes, 2 * size, size);
    $("aug-error").textContent = "";
  } catch (e) {
    $("aug-error").textContent = String(e);
  }
}

function drawThreshold() {
  const size = 256;
  const threshold = Number($("thr-threshold").value);
  $("thr-value").textContent = threshold.toFixed(2);
  const view = threshold_view(
    BigInt($("thr-seed").value), size, Number($("thr-blur").value), Number($("thr-noise").value), threshold);
  putRgba($("thr-canvas"), view.rgba, size, size);
  const m = JSON.parse(view.metrics_json);
  view.free();
  const c = m.aggregate_counts;
  const rows = [["F1", m.f1], ["Dice", m.mdice], ["IoU", m.miou], ["Precision", m.precision], ["Recall", m.recall]];
  $("thr-table").innerHTML =
    rows.map(([k, v]) => `<tr><th>${k}</th><td>${v.toFixed(4)}</td></tr>`).join("") +
    `<tr><th>TP / FP / FN</th><td>${c.tp} / ${c.fp} / ${c.fn}</td></tr>`;
}

await init();
$("aug-config").value = default_augmentation_json();
for (const id of ["lr-epochs", "lr-initial", "lr-final"]) $(id).addEventListener("input", drawLr);
for (const id of ["aug-sample", "aug-seed", "aug-epoch", "aug-config"]) $(id).addEventListener("input", drawAug);
$("aug-next").addEventListener("click", () => { $("aug-epoch").value = Number($("aug-epoch").value) + 1; drawAug(); });
for (const id of ["thr-seed", "thr-blur", "thr-noise", "thr-threshold"]) $(id).addEventListener("input", drawThreshold);
drawLr();
drawAug();
drawThreshold();
