import { StudioApi } from "./api.js";
import { buildStudio } from "./ui.js";

const root = document.getElementById("app");
if (!root) throw new Error("missing #app root element");

// served from the same origin as the API, so the base is empty
buildStudio(root, new StudioApi(""));
