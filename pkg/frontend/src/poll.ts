/** Poll the adaptation job at 2 Hz until it leaves the running state. */

import { AdaptStatus } from "./types.js";

export const pollAdaptation = async (
  fetchStatus: () => Promise<AdaptStatus>,
  onUpdate: (status: AdaptStatus) => void,
  intervalMs = 500
): Promise<AdaptStatus> => {
  for (;;) {
    let status: AdaptStatus;
    try {
      status = await fetchStatus();
    } catch {
      await sleep(intervalMs);
      continue;
    }
    onUpdate(status);
    if (status.state === "done" || status.state === "failed") return status;
    await sleep(intervalMs);
  }
};

const sleep = (ms: number) => new Promise((resolve) => setTimeout(resolve, ms));
