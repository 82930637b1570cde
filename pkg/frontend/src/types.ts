export interface Trajectory {
  points: [number, number][];
  actions: [number, number][];
}

export interface AnnotatedTrajectory extends Trajectory {
  reward?: number;
}

export interface PairResponse {
  pair_id: string | null;
  done?: boolean;
  a?: Trajectory;
  b?: Trajectory;
  labeled: number;
  total: number;
}

export interface AdaptStatus {
  state: "idle" | "running" | "done" | "failed";
  step: number;
  n_adapt: number;
  loss: number | null;
  error?: string;
}

export type Winner = "a" | "b" | "skip";
