import init, { slreq_trace, rule_grid, compare_pair } from "./pkg/fep_web.js";

const $ = (id) => document.getElementById(id);

function parseViews(text) {
  return text.split(";").map((s) => s.trim()).filter(Boolean).map((s) => {
    const [a1, a2, alts] = s.split("/");
    return {
      alpha1: parseInt(a1, 10) || 0,
      alpha2: parseInt(a2, 10) || 0,
      alt_grades: (alts || "").split(",").map((g) => g.trim()).filter(Boolean),
    };
  });
}

function updateTrace() {
  const input = {
    record: { s: +$("s").value, r: +$("r").value, sl: +$("sl").value },
    views: parseViews($("views").value),
    tau_ab: +$("tau").value,
    uplink_taus: $("taus").value.split(",").map(Number).filter((x) => !Number.isNaN(x)),
    max_sleep_ms: +$("L").value,
    variant: { ph: $("ph").value, ccs: $("ccs").value, table3: $("t3").value },
  };
  const out = $("trace");
  try {
    out.textContent = JSON.parse(slreq_trace(JSON.stringify(input))).text;
    out.className = "";
  } catch (e) {
    out.textContent = String(e.message || e);
    out.className = "err";
  }
}

function table(title, rows, rowLabel, colLabel) {
  const head = "<tr><th>" + rowLabel + " \\ " + colLabel + "</th>" +
    ["A1", "A2", "A3", "A4"].map((g) => "<th>" + g + "</th>").join("") + "</tr>";
  const body = rows.map((r, i) => "<tr><th>A" + (i + 1) + "</th>" +
    r.map((c) => '<td class="' + c + '">' + c + "</td>").join("") + "</tr>").join("");
  return '<table class="grid"><caption>' + title + "</caption>" + head + body + "</table>";
}

function updateGrids() {
  const g = JSON.parse(rule_grid($("t3").value));
  $("grids").innerHTML = table("temp", g.temp, "ph", "ccs") + table("SLPR", g.slpr, "temp", "cl");
}

function draw(canvas, run, title) {
  const ctx = canvas.getContext("2d");
  const [w, h] = run.arena;
  const sx = canvas.width / w, sy = canvas.height / h;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const pos = run.positions;
  ctx.strokeStyle = "#ddd";
  for (let i = 0; i < pos.length; i++) {
    for (let j = i + 1; j < pos.length; j++) {
      const d = Math.hypot(pos[i][0] - pos[j][0], pos[i][1] - pos[j][1]);
      if (d <= Math.min(run.ranges[i], run.ranges[j]) && run.nodes[i].alive && run.nodes[j].alive) {
        ctx.beginPath();
        ctx.moveTo(pos[i][0] * sx, pos[i][1] * sy);
        ctx.lineTo(pos[j][0] * sx, pos[j][1] * sy);
        ctx.stroke();
      }
    }
  }
  pos.forEach((p, i) => {
    const n = run.nodes[i];
    ctx.fillStyle = !n.alive ? "#000" : n.residual_ratio < 0.4 ? "#d33" : "#3a3";
    ctx.beginPath();
    ctx.arc(p[0] * sx, p[1] * sy, 4, 0, 2 * Math.PI);
    ctx.fill();
  });
  ctx.fillStyle = "#222";
  ctx.fillText(title, 6, 14);
}

function fmt(x, d = 3) {
  return x === null || x === undefined ? "-" : x.toFixed(d);
}

function runPair() {
  const out = $("pair");
  out.textContent = "running...";
  setTimeout(() => {
    try {
      const r = JSON.parse(compare_pair(+$("n").value, BigInt($("seed").value), +$("secs").value));
      draw($("cb"), r.baseline, "baseline");
      draw($("cf"), r.fep, "FEP");
      const rows = [
        ["delivery %", "delivery_ratio_pct", 2],
        ["energy / node (J)", "per_node_energy_j", 4],
        ["messages / node", "per_node_message_overhead", 1],
        ["delay / session (ms)", "delay_per_session_ms", 1],
        ["breaks / session", "link_breaks_per_session", 2],
        ["repair / node / session", "repair_cost_per_node_per_session", 3],
        ["max partitions", "max_partitions", 0],
      ];
      const b = r.baseline.report, f = r.fep.report;
      let text = "metric                     baseline        FEP\n";
      for (const [label, key, d] of rows) {
        text += label.padEnd(24) + fmt(b[key], d).padStart(11) + fmt(f[key], d).padStart(11) + "\n";
      }
      text += "route requests".padEnd(24) + String(b.raw.rreq_count).padStart(11) + String(f.raw.rreq_count).padStart(11) + "\n";
      text += "sleep grants / denies".padEnd(24) + "-".padStart(11) + (f.raw.grants + " / " + f.raw.denies).padStart(11) + "\n";
      text += "\ngreen: above 40% battery, red: below, black: dead";
      out.textContent = text;
      out.className = "";
    } catch (e) {
      out.textContent = String(e.message || e);
      out.className = "err";
    }
  }, 10);
}

await init();
for (const id of ["s", "r", "sl", "tau", "taus", "L", "views", "ph", "ccs"]) {
  $(id).addEventListener("input", updateTrace);
}
$("t3").addEventListener("input", () => { updateTrace(); updateGrids(); });
$("go").addEventListener("click", runPair);
updateTrace();
updateGrids();
