import init, { simulate, gate_report, trigger_table } from "./pkg/syncdmpc_wasm.js";

const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
const $ = (id) => document.getElementById(id);

function status(text) {
  $("status").textContent = text;
}

function etaScale() {
  return Number($("eta").value);
}

function scaler(lo, hi, a, b) {
  const span = hi - lo || 1;
  return (v) => a + ((v - lo) / span) * (b - a);
}

function clear(canvas) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.font = "11px system-ui";
  return ctx;
}

function axes(ctx, w, h, pad, xlabel, ylabel, yr) {
  ctx.strokeStyle = "#999";
  ctx.beginPath();
  ctx.moveTo(pad, pad / 2);
  ctx.lineTo(pad, h - pad);
  ctx.lineTo(w - pad / 2, h - pad);
  ctx.stroke();
  ctx.fillStyle = "#555";
  ctx.fillText(xlabel, w - pad - 20, h - pad + 16);
  ctx.fillText(ylabel, 4, pad / 2 + 8);
  if (yr) {
    ctx.fillText(yr[1].toPrecision(2), 4, pad / 2 + 22);
    ctx.fillText(yr[0].toPrecision(2), 4, h - pad);
  }
}

function polyline(ctx, pts, color, dash = []) {
  ctx.strokeStyle = color;
  ctx.setLineDash(dash);
  ctx.beginPath();
  pts.forEach(([x, y], i) => (i ? ctx.lineTo(x, y) : ctx.moveTo(x, y)));
  ctx.stroke();
  ctx.setLineDash([]);
}

function drawPaths(sim) {
  const c = $("paths");
  const ctx = clear(c);
  const all = sim.agents.flatMap((a) => [...a.pose.map((p) => [p[0], p[1]]), ...a.reference]);
  const xs = all.map((p) => p[0]);
  const ys = all.map((p) => p[1]);
  const lo = Math.min(...xs, ...ys);
  const hi = Math.max(...xs, ...ys);
  const pad = 30;
  const side = Math.min(c.width, c.height) - 2 * pad;
  const sx = scaler(lo, hi, pad, pad + side);
  const sy = scaler(lo, hi, pad + side, pad);
  sim.agents.forEach((a, i) => {
    polyline(ctx, a.reference.map(([x, y]) => [sx(x), sy(y)]), COLORS[i], [4, 4]);
    polyline(ctx, a.pose.map(([x, y]) => [sx(x), sy(y)]), COLORS[i]);
    ctx.fillStyle = COLORS[i];
    ctx.fillText(`robot ${a.id}`, c.width - 80, 20 + 14 * i);
  });
}

function drawErrors(sim) {
  const c = $("errors");
  const ctx = clear(c);
  const pad = 36;
  const vals = sim.agents.flatMap((a) => a.e.flat());
  const m = Math.max(0.06, ...vals.map(Math.abs));
  const sx = scaler(0, sim.steps - 1, pad, c.width - pad / 2);
  const sy = scaler(-m, m, c.height - pad, pad / 2);
  axes(ctx, c.width, c.height, pad, "k", "e", [-m, m]);
  ctx.fillStyle = "rgba(0,160,0,0.08)";
  ctx.fillRect(pad, sy(0.05), c.width - 1.5 * pad, sy(-0.05) - sy(0.05));
  const dashes = [[], [6, 3], [2, 2]];
  sim.agents.forEach((a, i) => {
    for (let j = 0; j < a.e[0].length; j++) {
      polyline(ctx, a.e.map((e, k) => [sx(k), sy(e[j])]), COLORS[i], dashes[j % 3]);
    }
  });
}

function drawSync(sim) {
  const c = $("sync");
  const ctx = clear(c);
  const pad = 36;
  const pairs = [];
  for (let i = 0; i < sim.agents.length; i++) {
    for (let j = i + 1; j < sim.agents.length; j++) {
      const a = sim.agents[i];
      const b = sim.agents[j];
      pairs.push({ label: `${a.id}-${b.id}`, gap: a.s.map((s, k) => Math.abs(s - b.s[k])) });
    }
  }
  const m = Math.max(0.06, ...pairs.flatMap((p) => p.gap));
  const sx = scaler(0, sim.steps - 1, pad, c.width - pad / 2);
  const sy = scaler(0, m, c.height - pad, pad / 2);
  axes(ctx, c.width, c.height, pad, "k", "|Δs|", [0, m]);
  polyline(ctx, [[sx(0), sy(0.05)], [sx(sim.steps - 1), sy(0.05)]], "#aaa", [3, 3]);
  pairs.forEach((p, i) => {
    polyline(ctx, p.gap.map((g, k) => [sx(k), sy(g)]), COLORS[(i + 1) % COLORS.length]);
    ctx.fillStyle = COLORS[(i + 1) % COLORS.length];
    ctx.fillText(p.label, c.width - 50, 16 + 14 * i);
  });
}

function drawRaster(sim) {
  const c = $("raster");
  const ctx = clear(c);
  const pad = 36;
  const sx = scaler(0, sim.steps, pad, c.width - pad / 2);
  const lane = (c.height - 2 * pad) / sim.agents.length;
  axes(ctx, c.width, c.height, pad, "k", "robot");
  sim.agents.forEach((a, i) => {
    const y = pad / 2 + i * lane + 4;
    ctx.fillStyle = "#555";
    ctx.fillText(String(a.id), 16, y + lane / 2);
    if (a.terminal_from !== null) {
      ctx.fillStyle = "#e6e6e6";
      ctx.fillRect(sx(a.terminal_from), y, sx(sim.steps) - sx(a.terminal_from), lane - 8);
    }
    ctx.fillStyle = COLORS[i];
    a.solves.forEach((k, n) => {
      ctx.fillRect(sx(k), y, Math.max(2, sx(k + a.phases[n]) - sx(k) - 1), lane - 8);
    });
  });
}

function table(headers, rows, classify = () => "") {
  const head = `<tr>${headers.map((h) => `<th>${h}</th>`).join("")}</tr>`;
  const body = rows
    .map((r) => `<tr>${r.map((v, j) => `<td class="${classify(v, j)}">${v}</td>`).join("")}</tr>`)
    .join("");
  return `<table>${head}${body}</table>`;
}

function runSimulation() {
  status("simulating…");
  setTimeout(() => {
    try {
      const t0 = performance.now();
      const sim = JSON.parse(simulate(Number($("seed").value) >>> 0, Number($("steps").value), etaScale()));
      const ms = performance.now() - t0;
      drawPaths(sim);
      drawErrors(sim);
      drawSync(sim);
      drawRaster(sim);
      const rows = sim.report.agents.map((a, i) => [
        a.id,
        sim.eta[i].toExponential(3),
        a.solves,
        a.steps,
        a.terminal_steps,
        a.max_phase,
        a.recoveries,
        a.final_error_norm.toExponential(2),
      ]);
      const hooks = Object.entries(sim.report.hooks).map(([name, h]) => [name, h.checked, h.failed]);
      $("details").innerHTML =
        table(["robot", "η", "solves", "steps", "terminal", "max m", "recoveries", "|e(end)|"], rows) +
        table(["hook", "checked", "failed"], hooks, (v, j) => (j === 2 ? (v === 0 ? "ok" : "bad") : ""));
      status(`${sim.steps} steps in ${ms.toFixed(0)} ms`);
    } catch (e) {
      status(`error: ${e.message ?? e}`);
    }
  }, 10);
}

function showGates() {
  try {
    const g = JSON.parse(gate_report(etaScale()));
    const rows = g.agents.map((a) => [
      a.id,
      a.admissible_eta.toExponential(3),
      a.eta.toExponential(3),
      a.eta_ok ? "ok" : "FAIL",
      `${a.l_g_sampled.toFixed(3)} ≤ ${a.l_g}`,
      `${a.l_kappa_sampled.toFixed(3)} ≤ ${a.l_kappa.toFixed(3)}`,
      a.terminal.decrease_violations + a.terminal.invariance_violations + a.terminal.input_violations,
      a.inclusion ? "ok" : "FAIL",
    ]);
    $("details").innerHTML =
      `<p>${g.passed ? "All gates passed." : "Gate failure: the simulation will refuse to run."}</p>` +
      table(
        ["robot", "admissible η", "η", "η gate", "L_g (sampled ≤ claimed)", "L_κ", "terminal violations", "inclusion"],
        rows,
        (v) => (v === "FAIL" ? "bad" : v === "ok" ? "ok" : ""),
      );
    status("gates evaluated");
  } catch (e) {
    status(`error: ${e.message ?? e}`);
  }
}

function showTriggers() {
  try {
    const t = JSON.parse(trigger_table(etaScale()));
    const n = t[0].upsilon.length;
    const ms = Array.from({ length: n }, (_, i) => `m=${i + 1}`);
    const up = t.map((r) => [r.id, "Υ(m)", ...r.upsilon.map((v) => v.toExponential(2))]);
    const pe = t.map((r) => [r.id, "ψ(m)η", ...r.psi_eta.map((v) => v.toExponential(2))]);
    const info = t
      .map((r) => `robot ${r.id}: η = ${r.eta.toExponential(3)}, Υ ≤ 0 for all m when η ≤ ${r.contraction_eta.toExponential(3)}`)
      .join("<br>");
    $("details").innerHTML =
      `<p>A phase of length m is admissible only while Υ(m) ≤ 0; ψ(m)η is the per-phase decrease slack.<br>${info}</p>` +
      table(["robot", "", ...ms], [...up, ...pe], (v, j) => (j > 1 && v.startsWith && !v.startsWith("-") && v !== "0.00e+0" ? "bad" : ""));
    status("trigger constants evaluated");
  } catch (e) {
    status(`error: ${e.message ?? e}`);
  }
}

async function main() {
  await init();
  $("eta").addEventListener("input", () => ($("eta-out").textContent = etaScale().toFixed(2)));
  $("run").addEventListener("click", runSimulation);
  $("gates").addEventListener("click", showGates);
  $("triggers").addEventListener("click", showTriggers);
  status("ready");
  runSimulation();
}

main();
