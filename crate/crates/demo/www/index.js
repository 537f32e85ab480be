import init, { decisionField, regularizationPath, raceCheck } from './pkg/plreg_demo.js';

const COLORS = [[230, 97, 1], [94, 60, 153], [27, 158, 119], [200, 30, 60], [60, 60, 60]];
const css = (c, alpha = 1) => `rgba(${c[0]}, ${c[1]}, ${c[2]}, ${alpha})`;
const $ = (id) => document.getElementById(id);

function fail(target, err) {
  target.innerHTML = `<p class="error">${String(err.message ?? err)}</p>`;
}

function drawField() {
  const canvas = $('df-canvas');
  const ctx = canvas.getContext('2d');
  let field;
  try {
    field = JSON.parse(decisionField(+$('df-a').value, +$('df-b').value, $('df-inter').checked, 120));
  } catch (err) {
    fail($('df-legend'), err);
    return;
  }
  const { resolution: n, label_names: labels } = field;
  const k = labels.length;
  const pad = 40;
  const w = canvas.width - pad - 10;
  const h = canvas.height - pad - 10;
  const img = ctx.createImageData(n, n);
  for (let cell = 0; cell < n * n; cell++) {
    const rgb = [0, 0, 0];
    for (let c = 0; c < k; c++) {
      const p = field.probabilities[cell * k + c];
      for (let i = 0; i < 3; i++) rgb[i] += p * COLORS[c][i];
    }
    img.data.set([...rgb.map((v) => 255 - 0.55 * (255 - v)), 255], cell * 4);
  }
  const tmp = new OffscreenCanvas(n, n);
  tmp.getContext('2d').putImageData(img, 0, 0);
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.imageSmoothingEnabled = true;
  ctx.drawImage(tmp, pad, 10, w, h);

  const [x0, x1] = field.x_range;
  const [y0, y1] = field.y_range;
  const px = (x) => pad + ((x - x0) / (x1 - x0)) * w;
  const py = (y) => 10 + ((y1 - y) / (y1 - y0)) * h;
  for (const [x, y, c] of field.points) {
    ctx.beginPath();
    ctx.arc(px(x), py(y), 3.2, 0, 2 * Math.PI);
    ctx.fillStyle = css(COLORS[c]);
    ctx.fill();
    ctx.strokeStyle = '#fff';
    ctx.stroke();
  }
  ctx.fillStyle = '#222';
  ctx.font = '12px system-ui';
  ctx.fillText(field.x_name, pad + w / 2 - 30, canvas.height - 8);
  ctx.save();
  ctx.translate(12, 10 + h / 2 + 30);
  ctx.rotate(-Math.PI / 2);
  ctx.fillText(field.y_name, 0, 0);
  ctx.restore();
  for (let t = Math.ceil(x0); t <= x1; t++) ctx.fillText(t, px(t) - 3, 10 + h + 14);
  for (let t = 0; t <= y1; t += 1) ctx.fillText(t, pad - 14, py(t) + 4);

  $('df-legend').innerHTML = labels
    .map((l, c) => `<span style="color:${css(COLORS[c])}">&#9679;</span> ${l}`)
    .join('<br>');
  const p = field.feature_names.length;
  const rows = labels.map((l, c) =>
    `${l.padEnd(11)} ${field.weights.slice(c * p, (c + 1) * p).map((v) => v.toFixed(3).padStart(7)).join('')}`);
  $('df-info').textContent =
    `features: ${field.feature_names.join(', ')}\n` +
    `normalized weights:\n${rows.join('\n')}\n` +
    `exact zeros: ${field.zeros}   EM iterations: ${field.iterations}\n` +
    `training error: ${(100 * field.training_error).toFixed(1)}%`;
}

function drawPath() {
  const canvas = $('rp-canvas');
  const ctx = canvas.getContext('2d');
  let view;
  try {
    view = JSON.parse(regularizationPath(+$('rp-max').value, +$('rp-min').value, +$('rp-steps').value));
  } catch (err) {
    fail($('rp-info'), err);
    return;
  }
  const { grid, coefficients, label_names: labels, feature_names: features } = view;
  const p = features.length;
  const pad = 45;
  const w = canvas.width - pad - 15;
  const h = canvas.height - pad - 10;
  const good = coefficients.filter((c) => c);
  const top = Math.max(...good.flat(), 1e-9);
  const px = (i) => pad + (i / (grid.length - 1)) * w;
  const py = (v) => 10 + (1 - v / top) * h;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.strokeStyle = '#999';
  ctx.strokeRect(pad, 10, w, h);
  ctx.font = '11px system-ui';
  ctx.fillStyle = '#222';
  grid.forEach((a, i) => ctx.fillText(a.toFixed(2), px(i) - 10, 10 + h + 14));
  ctx.fillText('a', pad + w / 2, canvas.height - 6);
  for (let t = 0; t <= 4; t++) ctx.fillText((top * t / 4).toFixed(2), 4, py(top * t / 4) + 4);
  const dashes = [[], [6, 3], [2, 3], [8, 3, 2, 3], [1, 1]];
  for (let c = 0; c < labels.length; c++) {
    for (let j = 0; j < p; j++) {
      ctx.beginPath();
      ctx.setLineDash(dashes[j % dashes.length]);
      ctx.strokeStyle = css(COLORS[c], 0.85);
      let started = false;
      coefficients.forEach((coef, i) => {
        if (!coef) { started = false; return; }
        const y = py(coef[c * p + j]);
        if (started) ctx.lineTo(px(i), y); else ctx.moveTo(px(i), y);
        started = true;
      });
      ctx.stroke();
    }
  }
  ctx.setLineDash([]);
  const zeros = view.zero_counts.map((z, i) => `a=${grid[i].toFixed(2)}: ${z ?? 'failed'}`).join('<br>');
  const failures = view.errors.filter((e) => e);
  $('rp-info').innerHTML =
    labels.map((l, c) => `<span style="color:${css(COLORS[c])}">&#9632;</span> ${l}`).join('<br>') +
    `<p>line style cycles over ${p} features<br>(${features.join(', ')})</p>` +
    `<p><b>exact zeros of ${labels.length * p}</b><br>${zeros}</p>` +
    (failures.length ? `<p class="error">${failures.join('<br>')}</p>` : '');
}

function runRace() {
  const out = $('rc-out');
  const rows = $('rc-lambda').value.trim().split('\n').map((r) => r.trim().split(/[\s,]+/).map(Number));
  const w = $('rc-w').value.trim().split(/[\s,]+/).map(Number);
  let check;
  try {
    check = JSON.parse(raceCheck(new Float64Array(rows.flat()), rows.length, new Float64Array(w),
      +$('rc-draws').value, BigInt($('rc-seed').value || 0)));
  } catch (err) {
    fail(out, err);
    return;
  }
  const body = check.exact.map((q, k) => {
    const z = (check.simulated[k] - q) / check.standard_error[k];
    return `<tr><td>class ${k + 1}</td><td>${q.toFixed(5)}</td><td>${check.simulated[k].toFixed(5)}</td><td>${z.toFixed(2)}</td></tr>`;
  }).join('');
  out.innerHTML = `<table><tr><th></th><th>probability</th><th>race frequency</th><th>z-score</th></tr>${body}</table>`;
}

await init();
$('df-run').addEventListener('click', drawField);
$('rp-run').addEventListener('click', drawPath);
$('rc-run').addEventListener('click', runRace);
drawField();
drawPath();
runRace();
