import init, { eeg_spectrum, aggregate_votes, missing_curve } from "./pkg/consensus_demo.js";

const $ = (id) => document.getElementById(id);

function axes(ctx, w, h) {
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#999";
  ctx.beginPath();
  ctx.moveTo(40, 10);
  ctx.lineTo(40, h - 20);
  ctx.lineTo(w - 10, h - 20);
  ctx.stroke();
}

function line(ctx, xs, ys, xmax, ymax, w, h, color) {
  ctx.strokeStyle = color;
  ctx.lineWidth = 2;
  ctx.beginPath();
  xs.forEach((x, i) => {
    const px = 40 + (x / xmax) * (w - 50);
    const py = h - 20 - (ys[i] / ymax) * (h - 30);
    i ? ctx.lineTo(px, py) : ctx.moveTo(px, py);
  });
  ctx.stroke();
  ctx.lineWidth = 1;
}

function fmt(v) {
  if (v === null || v === undefined) return "N/A";
  return Math.abs(v) >= 1000 || (Math.abs(v) < 0.01 && v !== 0) ? v.toExponential(3) : v.toFixed(3);
}

function drawSpectrum() {
  const amps = [...document.querySelectorAll("[data-band]")].map((e) => +e.value);
  let out;
  try {
    out = JSON.parse(eeg_spectrum(...amps, +$("noise").value, 7));
  } catch (e) {
    $("peak").textContent = e.message;
    $("peak").className = "error";
    return;
  }
  const canvas = $("psd");
  const ctx = canvas.getContext("2d");
  axes(ctx, canvas.width, canvas.height);
  const ymax = Math.max(...out.power) || 1;
  const xmax = out.frequencies[out.frequencies.length - 1];
  const colors = ["#cde", "#dec", "#edc", "#ecd"];
  out.bands.forEach((b, i) => {
    ctx.fillStyle = colors[i];
    const x0 = 40 + (b.lo / xmax) * (canvas.width - 50);
    const x1 = 40 + (b.hi / xmax) * (canvas.width - 50);
    ctx.fillRect(x0, 10, x1 - x0, canvas.height - 30);
    ctx.fillStyle = "#555";
    ctx.fillText(b.name, x0 + 2, 20);
  });
  line(ctx, out.frequencies, out.power, xmax, ymax, canvas.width, canvas.height, "#1f5fa8");
  $("peak").className = "";
  $("peak").textContent = `peak ${fmt(out.peak)} Hz; band power ` +
    out.bands.map((b) => `${b.name} ${fmt(b.power)}`).join(", ");
  $("features").innerHTML = "<tr><th>feature</th><th>value</th><th>unit</th></tr>" +
    out.features.map((f) => `<tr><td>${f.name}</td><td>${fmt(f.value)}</td><td>${f.unit}</td></tr>`).join("");
}

function runVotes() {
  const classes = $("classes").value.trim().split(/\s+/).filter(Boolean);
  const agents = $("agents").value.split("\n").filter((l) => l.trim()).map((l) => {
    const [label, conf] = l.trim().split(/\s+/);
    return {
      label: label && label !== "-" ? label : null,
      confidence: conf && conf !== "-" ? +conf : null,
    };
  });
  const show = (v) => (v ? v.label + (v.tie ? " (tie, earliest class)" : "") : "no vote");
  try {
    const out = JSON.parse(aggregate_votes(JSON.stringify({ classes, agents })));
    $("vote-result").className = "";
    $("vote-result").textContent = `majority: ${show(out.majority)}; weighted: ${show(out.weighted)}`;
  } catch (e) {
    $("vote-result").className = "error";
    $("vote-result").textContent = e.message;
  }
}

function drawCurve() {
  const skill = +$("skill").value;
  $("skill-value").textContent = skill.toFixed(2);
  const out = JSON.parse(missing_curve(skill, $("guess").checked, 11));
  const canvas = $("curve");
  const ctx = canvas.getContext("2d");
  axes(ctx, canvas.width, canvas.height);
  const xs = out.points.map((p) => p.ratio);
  line(ctx, xs, out.points.map((p) => p.vote_accuracy), 1, 1, canvas.width, canvas.height, "#1f5fa8");
  line(ctx, xs, out.points.map((p) => p.agent_accuracy), 1, 1, canvas.width, canvas.height, "#c0392b");
  ctx.fillStyle = "#1f5fa8";
  ctx.fillText("majority vote", canvas.width - 110, 20);
  ctx.fillStyle = "#c0392b";
  ctx.fillText("single agent", canvas.width - 110, 34);
  $("curve-table").innerHTML =
    `<tr><th>masked share (${out.modalities} modalities, ${out.windows} windows)</th><th>vote</th><th>agent</th><th>no vote</th></tr>` +
    out.points.map((p) => `<tr><td>${p.ratio.toFixed(2)}</td><td>${fmt(p.vote_accuracy)}</td><td>${fmt(p.agent_accuracy)}</td><td>${fmt(p.no_vote)}</td></tr>`).join("");
}

await init();
document.querySelectorAll("#spectrum input").forEach((e) => e.addEventListener("input", drawSpectrum));
["classes", "agents"].forEach((id) => $(id).addEventListener("input", runVotes));
["skill", "guess"].forEach((id) => $(id).addEventListener("input", drawCurve));
drawSpectrum();
runVotes();
drawCurve();
