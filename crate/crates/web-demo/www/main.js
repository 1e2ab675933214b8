import init, { sample_corpus, distort_dialogue, feature_heatmap, train_tiny } from "./pkg/dialogue_reward_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function escape(s) {
  return s.replace(/[&<>]/g, (c) => ({ "&": "&amp;", "<": "&lt;", ">": "&gt;" })[c]);
}

function showError(el, v) {
  el.innerHTML = `<p class="error">${escape(v.error)}</p>`;
}

function renderDistortion() {
  $("d-noise-v").textContent = $("d-noise").value;
  const v = JSON.parse(distort_dialogue($("corpus").value, num("d-index"), num("d-noise"), BigInt(num("d-seed"))));
  const out = $("d-out");
  if (v.error) return showError(out, v);
  $("d-noise").max = v.turns.length;
  const rows = v.turns.map((t, i) => {
    const b = t.replaced
      ? `${escape(t.b)}<br><span class="muted">was: ${escape(t.original_b)}</span>`
      : escape(t.b);
    return `<tr><td>${i + 1}</td><td>A: ${escape(t.a)}</td><td class="${t.replaced ? "replaced" : ""}">B: ${b}</td></tr>`;
  });
  out.innerHTML = `<p class="score">reward ${v.score} (${v.turns.length} turns, ${v.noise} replaced)</p><table>${rows.join("")}</table>`;
}

function colour(x, scale) {
  const t = Math.max(-1, Math.min(1, x / scale));
  const r = t > 0 ? 255 : Math.round(255 * (1 + t));
  const b = t < 0 ? 255 : Math.round(255 * (1 - t));
  const g = Math.round(255 * (1 - Math.abs(t)));
  return `rgb(${r},${g},${b})`;
}

function renderHeatmap() {
  $("h-len-v").textContent = $("h-len").value;
  $("h-noise-v").textContent = $("h-noise").value;
  const v = JSON.parse(feature_heatmap(num("h-len"), num("h-noise"), BigInt(num("h-seed"))));
  const info = $("h-info");
  if (v.error) return showError(info, v);
  info.textContent = `dialogue of ${v.turns} turns, noise ${v.noise}, reward ${v.score}`;
  const c = $("h-canvas");
  const ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  const left = 50;
  const cw = (c.width - left) / v.rows[0].length;
  const ch = c.height / v.rows.length;
  const scale = Math.max(...v.rows.flat().map(Math.abs), 1e-9);
  ctx.font = `${Math.min(12, ch)}px sans-serif`;
  ctx.textBaseline = "middle";
  v.rows.forEach((row, i) => {
    row.forEach((x, j) => {
      ctx.fillStyle = colour(x, scale);
      ctx.fillRect(left + j * cw, i * ch, cw, ch);
    });
    ctx.fillStyle = v.labels[i].endsWith("*") ? "#b00" : "#333";
    ctx.fillText(v.labels[i], 4, i * ch + ch / 2);
  });
}

function drawScatter(points, r) {
  const c = $("t-canvas");
  const ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  const pad = 36;
  const xs = points.map((p) => p[0]);
  const ys = points.map((p) => p[1]);
  const lo = Math.min(...xs, ...ys);
  const hi = Math.max(...xs, ...ys);
  const sx = (x) => pad + ((x - lo) / (hi - lo)) * (c.width - 2 * pad);
  const sy = (y) => c.height - pad - ((y - lo) / (hi - lo)) * (c.height - 2 * pad);
  ctx.strokeStyle = "#bbb";
  ctx.beginPath();
  ctx.moveTo(sx(lo), sy(lo));
  ctx.lineTo(sx(hi), sy(hi));
  ctx.stroke();
  ctx.fillStyle = "rgba(30, 90, 200, 0.45)";
  for (const [x, y] of points) {
    ctx.beginPath();
    ctx.arc(sx(x), sy(y), 2.5, 0, 2 * Math.PI);
    ctx.fill();
  }
  ctx.fillStyle = "#333";
  ctx.font = "12px sans-serif";
  ctx.fillText("true reward (jittered)", c.width / 2 - 50, c.height - 8);
  ctx.save();
  ctx.translate(12, c.height / 2 + 40);
  ctx.rotate(-Math.PI / 2);
  ctx.fillText("predicted reward", 0, 0);
  ctx.restore();
  ctx.fillText(`r = ${r.toFixed(3)}`, pad + 4, pad - 12);
}

function runTraining() {
  const info = $("t-info");
  info.textContent = "training...";
  // let the status paint before the blocking call
  setTimeout(() => {
    const v = JSON.parse(train_tiny(num("t-len"), num("t-epochs"), BigInt(num("t-seed"))));
    if (v.error) return showError(info, v);
    const last = v.epochs[v.epochs.length - 1];
    info.textContent =
      `${v.train_examples} training / ${v.test_examples} test examples; ` +
      `${v.epochs.length} epochs, best ${v.best_epoch}, last train MAE ${last.train_mae.toFixed(3)}; ` +
      `test MAE ${v.mae.toFixed(3)}, Pearson r ${v.pearson_r.toFixed(3)}`;
    drawScatter(v.scatter, v.pearson_r);
  }, 20);
}

await init();
$("corpus").value = sample_corpus();
for (const id of ["corpus", "d-index", "d-noise", "d-seed"]) $(id).addEventListener("input", renderDistortion);
for (const id of ["h-len", "h-noise", "h-seed"]) $(id).addEventListener("input", renderHeatmap);
$("t-run").addEventListener("click", runTraining);
renderDistortion();
renderHeatmap();
