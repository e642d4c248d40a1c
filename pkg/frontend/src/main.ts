import { startViewer } from "./viewer.js";

window.addEventListener("DOMContentLoaded", () => startViewer());
