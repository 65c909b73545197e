import pytest

from vr2robot.synthetic import make_corpus, solve_corpus_calibration


@pytest.fixture(scope="session")
def mechanism_suite():
    """Placement-height study over the standard subsets, seeds 0..9."""
    from vr2robot.cotrain import run_mechanism_suite

    return run_mechanism_suite(seeds=range(10))


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """Small raw corpus shared by ingestion/pipeline tests."""
    root = tmp_path_factory.mktemp("corpus")
    manifest = make_corpus(root, n_human_sessions=2, n_robot_sessions=2,
                           episodes_per_session=2, n_frames=30, seed=0)
    manifest["calibration"] = solve_corpus_calibration(manifest)
    return manifest


@pytest.fixture(scope="session")
def ingested(corpus, tmp_path_factory):
    """Corpus ingested into a dataset directory."""
    from vr2robot.dataset import (
        ingest_human_raw,
        ingest_robot_raw,
        load_extrinsic,
        read_dataset,
        write_dataset,
    )

    episodes = []
    for sess in corpus["human_sessions"]:
        episodes.extend(ingest_human_raw(sess, corpus["calibration"]).episodes)
    extrinsic = load_extrinsic(corpus["extrinsic"])
    for sess in corpus["robot_sessions"]:
        episodes.extend(ingest_robot_raw(sess, extrinsic).episodes)
    out = tmp_path_factory.mktemp("dataset")
    index = write_dataset(episodes, out)
    read_dataset(out)  # sanity: written dataset must validate
    return {"dir": out, "index": index, "episodes": episodes}
