use resqu::config::RunConfig;

#[test]
fn defaults_are_valid_and_desk_scaled() {
    let c = RunConfig::default();
    c.validate().unwrap();
    assert_eq!((c.lr_size, c.hr_size, c.scale_factor), (32, 128, 4));
    assert_eq!((c.lr, c.batch_size, c.timesteps, c.sample_steps), (5e-5, 6, 1000, 200));
    RunConfig::desk().validate().unwrap();
    let p = RunConfig::full();
    p.validate().unwrap();
    assert_eq!((p.lr_size, p.hr_size), (128, 512));
}

#[test]
fn toml_roundtrip_and_partial_files() {
    let c = RunConfig::desk();
    assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    let partial = RunConfig::from_toml("seed = 11\ncfw_w = 0.5\n").unwrap();
    assert_eq!(partial.seed, 11);
    assert_eq!(partial.cfw_w, 0.5);
    assert_eq!(partial.hr_size, 128);
}

#[test]
fn invalid_configs_are_rejected() {
    for text in [
        "hr_size = 100\n",
        "lr_size = 16\nhr_size = 128\n",
        "cfw_w = 1.5\n",
        "sample_steps = 0\n",
        "sample_steps = 2000\n",
        "batch_size = 0\n",
        "lr = -1.0\n",
        "no_such_key = 1\n",
        "data_dir = \"/definitely/not/here\"\n",
    ] {
        assert!(RunConfig::from_toml(text).is_err(), "{text}");
    }
}

#[test]
fn echo_writes_a_loadable_copy() {
    let dir = tempfile::tempdir().unwrap();
    let c = RunConfig::default();
    c.echo(dir.path()).unwrap();
    assert_eq!(RunConfig::load(&dir.path().join("config.toml")).unwrap(), c);
}
